//! Weight checkpoints: one JSON manifest line followed by the parameters as
//! little-endian `f64`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wmoco_core::net::{Architecture, DenoiserNet, Target};
use wmoco_core::sde::NoiseSchedule;
use wmoco_core::{Domain, Plane};

use crate::error::{Error, Result};
use crate::io::write_bytes;

pub const FORMAT: &str = "wmoco-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub state_channels: usize,
    pub width: usize,
    pub levels: usize,
    pub wt_levels: u32,
    pub kernel: usize,
    /// `noise` or `clean_residual`.
    pub target: String,
}

pub fn target_name(t: Target) -> &'static str {
    match t {
        Target::Noise => "noise",
        Target::CleanResidual => "clean_residual",
    }
}

pub fn parse_target(s: &str) -> Option<Target> {
    match s {
        "noise" => Some(Target::Noise),
        "clean_residual" => Some(Target::CleanResidual),
        _ => None,
    }
}

impl From<&Architecture> for ArchSpec {
    fn from(a: &Architecture) -> Self {
        Self {
            state_channels: a.state_channels,
            width: a.width,
            levels: a.levels,
            wt_levels: a.wt_levels,
            kernel: a.kernel,
            target: target_name(a.target).into(),
        }
    }
}

impl ArchSpec {
    pub fn to_arch(&self) -> Option<Architecture> {
        Some(Architecture {
            state_channels: self.state_channels,
            width: self.width,
            levels: self.levels,
            wt_levels: self.wt_levels,
            kernel: self.kernel,
            target: parse_target(&self.target)?,
        })
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("arch serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub plane: String,
    pub domain: String,
    pub arch: ArchSpec,
    pub arch_hash: String,
    pub input_channels: usize,
    pub output_channels: usize,
    pub n_params: usize,
    pub dtype: String,
    /// Diffusion steps of the training schedule.
    pub steps: usize,
    /// Stationary noise scale of the training schedule.
    pub lambda: f64,
}

pub fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Wavelet => "wavelet",
        Domain::Image => "image",
    }
}

pub fn parse_domain(s: &str) -> Option<Domain> {
    match s {
        "wavelet" => Some(Domain::Wavelet),
        "image" => Some(Domain::Image),
        _ => None,
    }
}

/// Domain implied by the state channel count.
pub fn domain_of(arch: &Architecture) -> Result<Domain> {
    match arch.state_channels {
        4 => Ok(Domain::Wavelet),
        1 => Ok(Domain::Image),
        c => Err(Error::Config(format!("no domain has {c} state channels"))),
    }
}

pub fn encode(net: &DenoiserNet, sched: &NoiseSchedule) -> Result<Vec<u8>> {
    let arch = ArchSpec::from(net.arch());
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        plane: net.plane().as_str().into(),
        domain: domain_name(domain_of(net.arch())?).into(),
        arch_hash: arch.hash(),
        input_channels: net.arch().input_channels(),
        output_channels: net.arch().state_channels,
        arch,
        n_params: net.param_count(),
        dtype: "f64le".into(),
        steps: sched.steps(),
        lambda: sched.lambda(),
    };
    let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
    out.push(b'\n');
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Manifest, DenoiserNet)> {
    let header_err = |reason: String| Error::Header {
        path: path.into(),
        reason,
    };
    let end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| header_err("missing manifest line".into()))?;
    let m: Manifest = serde_json::from_slice(&bytes[..end]).map_err(|e| header_err(e.to_string()))?;
    if m.format != FORMAT || m.version != VERSION || m.dtype != "f64le" {
        return Err(header_err(format!(
            "unsupported checkpoint {} v{} ({})",
            m.format, m.version, m.dtype
        )));
    }
    if m.arch.hash() != m.arch_hash {
        return Err(header_err("architecture hash does not match the manifest".into()));
    }
    let plane = Plane::parse(&m.plane).ok_or_else(|| header_err(format!("unknown plane {:?}", m.plane)))?;
    let blob = &bytes[end + 1..];
    if blob.len() != 8 * m.n_params {
        return Err(Error::Size {
            path: path.into(),
            expected: 8 * m.n_params,
            actual: blob.len(),
        });
    }
    let params = blob
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let arch = m
        .arch
        .to_arch()
        .ok_or_else(|| header_err(format!("unknown target {:?}", m.arch.target)))?;
    let net = DenoiserNet::from_params(arch, plane, params)?;
    Ok((m, net))
}

pub fn save(net: &DenoiserNet, sched: &NoiseSchedule, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path, &encode(net, sched)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<(Manifest, DenoiserNet)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
