//! Volume files and small text outputs.
//!
//! A volume file is one JSON header line followed by the voxels as
//! little-endian `f32`, x fastest:
//!
//! ```text
//! {"dims":[d1,d2,d3],"dtype":"f32le","range":[0.0,1.0]}\n<payload>
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wmoco_core::Volume;

use crate::error::{Error, Result};

pub const DTYPE: &str = "f32le";
const MAX_HEADER: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeHeader {
    pub dims: Vec<usize>,
    pub dtype: String,
    pub range: [f64; 2],
}

/// Encodes a volume; values are rounded to `f32`.
pub fn encode_volume(vol: &Volume) -> Vec<u8> {
    let header = VolumeHeader {
        dims: vol.dims().to_vec(),
        dtype: DTYPE.into(),
        range: [0.0, 1.0],
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.reserve(4 * vol.len());
    for &v in vol.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a volume file's bytes; `path` only labels errors.
pub fn decode_volume(bytes: &[u8], path: &Path) -> Result<Volume> {
    let header_err = |reason: String| Error::Header {
        path: path.into(),
        reason,
    };
    let end = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err(format!("no newline-terminated header in the first {MAX_HEADER} bytes")))?;
    let header: VolumeHeader =
        serde_json::from_slice(&bytes[..end]).map_err(|e| header_err(e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(header_err(format!("dtype {:?}, expected {DTYPE:?}", header.dtype)));
    }
    let dims: [usize; 3] = header
        .dims
        .as_slice()
        .try_into()
        .map_err(|_| header_err(format!("dims has {} entries, expected 3", header.dims.len())))?;
    if let Some(d) = dims.iter().find(|&&d| d < 2 || d % 2 != 0) {
        return Err(header_err(format!("dims {dims:?}: {d} is not an even size of at least 2")));
    }
    if !header.range.iter().all(|r| r.is_finite()) {
        return Err(header_err("range must be finite".into()));
    }
    let payload = &bytes[end + 1..];
    let expected = 4 * dims.iter().product::<usize>();
    if payload.len() != expected {
        return Err(Error::Size {
            path: path.into(),
            expected,
            actual: payload.len(),
        });
    }
    let mut data = Vec::with_capacity(expected / 4);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        if !v.is_finite() {
            return Err(Error::data(path, format!("non-finite value {v} at voxel {i}")));
        }
        data.push(v as f64);
    }
    Ok(Volume::new(dims, data)?)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, path)
}

pub fn save_volume(vol: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode_volume(vol))
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
}

/// Writes a CSV with `header` and one line per row.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = header.join(",");
    text.push('\n');
    for r in rows {
        text.push_str(&r.join(","));
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}
