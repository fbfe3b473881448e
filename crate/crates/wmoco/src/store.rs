//! Recorded-noise files used by the oracle provider.
//!
//! One JSON line lists the entries; their fields follow as little-endian
//! `f64` in the same order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wmoco_core::provider::NoiseStore;
use wmoco_core::{FeatureMap, Plane};

use crate::error::{Error, Result};
use crate::io::write_bytes;

const FORMAT: &str = "wmoco-noise";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    step: usize,
    plane: String,
    index: usize,
    channels: usize,
    dims: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    entries: Vec<Entry>,
}

pub fn encode(store: &NoiseStore) -> Vec<u8> {
    let entries = store
        .iter()
        .map(|(&(step, plane, index), m)| Entry {
            step,
            plane: plane.as_str().into(),
            index,
            channels: m.channels(),
            dims: m.dims(),
        })
        .collect();
    let header = Header {
        format: FORMAT.into(),
        version: 1,
        entries,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (_, m) in store.iter() {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<NoiseStore> {
    let header_err = |reason: String| Error::Header {
        path: path.into(),
        reason,
    };
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("missing header line".into()))?;
    let h: Header = serde_json::from_slice(&bytes[..end]).map_err(|e| header_err(e.to_string()))?;
    if h.format != FORMAT || h.version != 1 {
        return Err(header_err(format!("unsupported noise file {} v{}", h.format, h.version)));
    }
    let blob = &bytes[end + 1..];
    let expected: usize = h.entries.iter().map(|e| 8 * e.channels * e.dims[0] * e.dims[1]).sum();
    if blob.len() != expected {
        return Err(Error::Size {
            path: path.into(),
            expected,
            actual: blob.len(),
        });
    }
    let mut store = NoiseStore::new();
    let mut at = 0;
    for e in h.entries {
        let plane = Plane::parse(&e.plane).ok_or_else(|| header_err(format!("unknown plane {:?}", e.plane)))?;
        let n = e.channels * e.dims[0] * e.dims[1];
        let data = blob[at..at + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        at += 8 * n;
        store.insert(e.step, plane, e.index, FeatureMap::new(e.channels, e.dims, data)?);
    }
    Ok(store)
}

pub fn save(store: &NoiseStore, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode(store))
}

pub fn load(path: impl AsRef<Path>) -> Result<NoiseStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
