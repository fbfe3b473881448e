//! Rigid-motion artifacts simulated by k-space line replacement.
//!
//! A "line" is a full kx column at fixed (ky, kz). The affected ky indices
//! form `n_events` contiguous runs in centered frequency order (k = -d2/2
//! first); every run takes its k-space lines from the spectrum of the volume
//! after one rigid motion: a trilinear rotation about the volume center
//! followed by a sub-voxel translation applied as a phase ramp.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};
use wmoco_core::rng::{substream, Purpose, StreamKey};
use wmoco_core::Volume;

use crate::error::{Error, Result};

/// Complex field with the same layout as [`Volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub dims: [usize; 3],
    pub data: Vec<Complex64>,
}

impl Spectrum {
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Complex64 {
        self.data[self.index(x, y, z)]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Largest imaginary magnitude.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().map(|c| c.im.abs()).fold(0.0, f64::max)
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }
}

fn transform(data: &mut [Complex64], dims: [usize; 3], dir: FftDirection) {
    let mut planner = FftPlanner::new();
    let total = data.len();
    let mut lines = vec![Complex64::default(); total];
    for axis in 0..3 {
        let n = dims[axis];
        let stride: usize = dims[..axis].iter().product();
        let fft = planner.plan_fft(n, dir);
        // gather every line along `axis` contiguously, transform, scatter back
        let starts: Vec<usize> = (0..total).filter(|i| (i / stride) % n == 0).collect();
        for (l, &s) in starts.iter().enumerate() {
            for k in 0..n {
                lines[l * n + k] = data[s + k * stride];
            }
        }
        fft.process(&mut lines);
        for (l, &s) in starts.iter().enumerate() {
            for k in 0..n {
                data[s + k * stride] = lines[l * n + k];
            }
        }
    }
    let scale = 1.0 / (total as f64).sqrt();
    data.iter_mut().for_each(|c| *c *= scale);
}

/// Unitary 3D DFT.
pub fn fft3(vol: &Volume) -> Spectrum {
    let mut data: Vec<Complex64> = vol.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, vol.dims(), FftDirection::Forward);
    Spectrum { dims: vol.dims(), data }
}

/// Unitary inverse 3D DFT.
pub fn ifft3(spec: &Spectrum) -> Spectrum {
    let mut data = spec.data.clone();
    transform(&mut data, spec.dims, FftDirection::Inverse);
    Spectrum { dims: spec.dims, data }
}

/// Signed frequency of DFT index `k` on `n` points.
fn signed_freq(k: usize, n: usize) -> f64 {
    if k < n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Multiplies by the phase ramp that translates the image by `shift` voxels.
pub fn translate_spectrum(spec: &mut Spectrum, shift: [f64; 3]) {
    let [d1, d2, d3] = spec.dims;
    for z in 0..d3 {
        let pz = signed_freq(z, d3) * shift[2] / d3 as f64;
        for y in 0..d2 {
            let py = signed_freq(y, d2) * shift[1] / d2 as f64;
            for x in 0..d1 {
                let px = signed_freq(x, d1) * shift[0] / d1 as f64;
                let i = spec.index(x, y, z);
                spec.data[i] *= Complex64::from_polar(1.0, -2.0 * PI * (px + py + pz));
            }
        }
    }
}

/// Rotation by `angle_deg` about the unit `axis` through the volume center,
/// trilinear, zero outside.
pub fn rotate(vol: &Volume, axis: [f64; 3], angle_deg: f64) -> Result<Volume> {
    if angle_deg == 0.0 {
        return Ok(vol.clone());
    }
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    if !(n > 0.0) {
        return Err(Error::Spec("rotation axis must be nonzero".into()));
    }
    let [ux, uy, uz] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle_deg.to_radians().sin_cos();
    let t = 1.0 - c;
    let r = [
        [c + ux * ux * t, ux * uy * t - uz * s, ux * uz * t + uy * s],
        [uy * ux * t + uz * s, c + uy * uy * t, uy * uz * t - ux * s],
        [uz * ux * t - uy * s, uz * uy * t + ux * s, c + uz * uz * t],
    ];
    let dims = vol.dims();
    let center = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let sample_at = |p: [f64; 3]| -> f64 {
        let mut acc = 0.0;
        let base = p.map(|v| v.floor());
        let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for a in 0..3 {
                let q = base[a] as i64 + off[a] as i64;
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                inside &= q >= 0 && (q as usize) < dims[a];
                idx[a] = q.max(0) as usize;
            }
            if inside && w != 0.0 {
                acc += w * vol.get(idx[0], idx[1], idx[2]);
            }
        }
        acc
    };
    Ok(Volume::from_fn(dims, |x, y, z| {
        let d = [x as f64 - center[0], y as f64 - center[1], z as f64 - center[2]];
        // inverse map: source = R^T d + center
        let src = [0, 1, 2].map(|a| r[0][a] * d[0] + r[1][a] * d[1] + r[2][a] * d[2] + center[a]);
        sample_at(src)
    })?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub m_min: f64,
    pub m_max: f64,
    pub n_events: usize,
    /// Bound on each translation component, voxels.
    pub max_translation: f64,
    /// Bound on the rotation angle, degrees.
    pub max_rotation: f64,
    pub seed: u64,
}

impl MotionSpec {
    pub fn mild(seed: u64) -> Self {
        Self::with_range(0.30, 0.45, seed)
    }

    pub fn severe(seed: u64) -> Self {
        Self::with_range(0.45, 0.50, seed)
    }

    pub fn with_range(m_min: f64, m_max: f64, seed: u64) -> Self {
        Self {
            m_min,
            m_max,
            n_events: 3,
            max_translation: 3.0,
            max_rotation: 3.0,
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "mild" => Some(Self::mild(seed)),
            "severe" => Some(Self::severe(seed)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.m_min && self.m_min <= self.m_max && self.m_max <= 1.0) {
            return Err(Error::Spec(format!(
                "need 0 <= m_min <= m_max <= 1, got ({}, {})",
                self.m_min, self.m_max
            )));
        }
        if !(self.max_translation >= 0.0 && self.max_rotation >= 0.0) {
            return Err(Error::Spec("motion bounds must be non-negative".into()));
        }
        if self.n_events == 0 && self.m_max > 0.0 {
            return Err(Error::Spec("at least one motion event is needed".into()));
        }
        Ok(())
    }
}

/// One rigid motion and the ky run it occupies (centered order, `[start, start + len)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub ky_start: usize,
    pub ky_len: usize,
    pub translation: [f64; 3],
    pub axis: [f64; 3],
    pub angle_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    pub spec: MotionSpec,
    /// Drawn fraction of affected lines.
    pub fraction: f64,
    /// Affected lines over all (ky, kz) lines.
    pub realized_fraction: f64,
    pub lines_affected: usize,
    pub total_lines: usize,
    pub ky_order: String,
    pub events: Vec<MotionEvent>,
    /// The output is the real part of the inverse transform, clamped to [0, 1].
    pub real_part_taken: bool,
    pub max_imag_discarded: f64,
}

/// DFT index of the `c`-th ky line in centered order.
fn centered_to_index(c: usize, n: usize) -> usize {
    (c + n - n / 2) % n
}

/// Replaces the lines of each event's ky run with that event's moved spectrum.
/// Returns the complex image before the real part is taken.
pub fn apply_events(vol: &Volume, events: &[MotionEvent]) -> Result<Spectrum> {
    let [d1, d2, d3] = vol.dims();
    let mut spec = fft3(vol);
    for ev in events {
        if ev.ky_start + ev.ky_len > d2 {
            return Err(Error::Spec(format!(
                "ky run [{}, {}) exceeds {} lines",
                ev.ky_start,
                ev.ky_start + ev.ky_len,
                d2
            )));
        }
        let mut moved = fft3(&rotate(vol, ev.axis, ev.angle_deg)?);
        translate_spectrum(&mut moved, ev.translation);
        for c in ev.ky_start..ev.ky_start + ev.ky_len {
            let y = centered_to_index(c, d2);
            for z in 0..d3 {
                let at = spec.index(0, y, z);
                spec.data[at..at + d1].copy_from_slice(&moved.data[at..at + d1]);
            }
        }
    }
    Ok(ifft3(&spec))
}

/// Corrupts `vol` according to `spec`. Zero severity returns the input unchanged.
pub fn corrupt(vol: &Volume, spec: &MotionSpec) -> Result<(Volume, MotionReport)> {
    spec.validate()?;
    let [_, d2, d3] = vol.dims();
    let mut rng = substream(spec.seed, StreamKey::new(Purpose::Motion, 0, None, 0));
    let fraction = if spec.m_min == spec.m_max {
        spec.m_min
    } else {
        rng.random_range(spec.m_min..=spec.m_max)
    };
    let k = (fraction * d2 as f64).round() as usize;
    if fraction > 0.0 && k == 0 {
        return Err(Error::DegenerateSpec(format!(
            "fraction {fraction:.3} of {d2} ky lines rounds to zero"
        )));
    }
    let mut report = MotionReport {
        spec: *spec,
        fraction,
        realized_fraction: k as f64 / d2 as f64,
        lines_affected: k * d3,
        total_lines: d2 * d3,
        ky_order: "centered".into(),
        events: Vec::new(),
        real_part_taken: true,
        max_imag_discarded: 0.0,
    };
    if k == 0 {
        return Ok((vol.clone(), report));
    }
    let n = spec.n_events.min(k);
    // split k lines into n non-empty runs
    let mut cuts: Vec<usize> = sample(&mut rng, k - 1, n - 1).into_iter().map(|c| c + 1).collect();
    cuts.sort_unstable();
    let mut lens = Vec::with_capacity(n);
    let mut prev = 0;
    for c in cuts.into_iter().chain([k]) {
        lens.push(c - prev);
        prev = c;
    }
    // place the runs among the free lines, keeping their order
    let free = d2 - k;
    let mut slots: Vec<usize> = sample(&mut rng, free + n, n).into_vec();
    slots.sort_unstable();
    let mut used = 0;
    for (j, (&slot, &len)) in slots.iter().zip(&lens).enumerate() {
        let start = slot - j + used;
        used += len;
        let mt = spec.max_translation;
        let translation = [0; 3].map(|_| if mt > 0.0 { rng.random_range(-mt..=mt) } else { 0.0 });
        let mut axis = [0.0; 3];
        wmoco_core::rng::fill_normal(&mut rng, &mut axis);
        let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-12);
        axis.iter_mut().for_each(|a| *a /= norm);
        let mr = spec.max_rotation;
        let angle_deg = if mr > 0.0 { rng.random_range(-mr..=mr) } else { 0.0 };
        report.events.push(MotionEvent {
            ky_start: start,
            ky_len: len,
            translation,
            axis,
            angle_deg,
        });
    }
    let img = apply_events(vol, &report.events)?;
    report.max_imag_discarded = img.max_imag();
    let data = img.real_part().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok((Volume::new(vol.dims(), data)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_order_starts_at_negative_nyquist() {
        assert_eq!(centered_to_index(0, 8), 4);
        assert_eq!(centered_to_index(4, 8), 0);
        assert_eq!(centered_to_index(7, 8), 3);
    }

    #[test]
    fn runs_are_disjoint_and_sized() {
        let vol = Volume::filled([8, 32, 8], 0.5).unwrap();
        for seed in 0..20 {
            let (_, rep) = corrupt(&vol, &MotionSpec::mild(seed)).unwrap();
            let total: usize = rep.events.iter().map(|e| e.ky_len).sum();
            assert_eq!(total * 8, rep.lines_affected);
            assert!((0.30..=0.45).contains(&rep.fraction));
            let mut covered = vec![false; 32];
            for e in &rep.events {
                assert!(e.ky_len > 0);
                for c in e.ky_start..e.ky_start + e.ky_len {
                    assert!(!covered[c]);
                    covered[c] = true;
                }
            }
        }
    }

    #[test]
    fn rotation_by_zero_and_full_turn() {
        let v = Volume::from_fn([6, 6, 6], |x, y, z| ((x + 2 * y + 3 * z) % 5) as f64 / 4.0).unwrap();
        assert_eq!(rotate(&v, [0.0, 0.0, 1.0], 0.0).unwrap(), v);
        let r = rotate(&v, [0.0, 0.0, 1.0], 360.0).unwrap();
        assert!(r.max_abs_diff(&v) < 1e-9);
        // a quarter turn about z maps voxel centers onto voxel centers
        let q = rotate(&v, [0.0, 0.0, 1.0], 90.0).unwrap();
        let back = rotate(&q, [0.0, 0.0, 1.0], -90.0).unwrap();
        assert!(back.max_abs_diff(&v) < 1e-9);
    }
}
