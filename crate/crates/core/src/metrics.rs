//! Image-quality and slice-consistency metrics.

use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::field::Image;
use crate::volume::{Plane, Volume};

/// Peak signal-to-noise ratio in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &[f64], b: &[f64], data_range: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(dim_err!("psnr inputs have lengths {} and {}", a.len(), b.len()));
    }
    if !(data_range > 0.0) {
        return Err(Error::Parameter(alloc::format!("data range must be positive, got {data_range}")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(data_range * data_range / mse))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub data_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
        }
    }
}

fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let mut taps: Vec<f64> = (0..window)
        .map(|i| {
            let d = i as f64 - c;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable "valid" filtering with `taps` along both axes.
fn filter_valid(src: &[f64], dims: [usize; 2], taps: &[f64]) -> Vec<f64> {
    let w = taps.len();
    let (n0, n1) = (dims[0], dims[1]);
    let (m0, m1) = (n0 - w + 1, n1 - w + 1);
    let mut rows = alloc::vec![0.0; m0 * n1];
    for j in 0..n1 {
        for i in 0..m0 {
            rows[i + m0 * j] = taps.iter().enumerate().map(|(k, t)| t * src[i + k + n0 * j]).sum();
        }
    }
    let mut out = alloc::vec![0.0; m0 * m1];
    for j in 0..m1 {
        for i in 0..m0 {
            out[i + m0 * j] = taps.iter().enumerate().map(|(k, t)| t * rows[i + m0 * (j + k)]).sum();
        }
    }
    out
}

/// Mean structural similarity over all full windows.
pub fn ssim(a: &Image, b: &Image, params: &SsimParams) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(dim_err!("ssim inputs have shapes {:?} and {:?}", a.dims(), b.dims()));
    }
    let dims = a.dims();
    if dims[0] < params.window || dims[1] < params.window {
        return Err(dim_err!(
            "image {}x{} smaller than the {}-pixel ssim window",
            dims[0],
            dims[1],
            params.window
        ));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let c1 = libm::pow(params.k1 * params.data_range, 2.0);
    let c2 = libm::pow(params.k2 * params.data_range, 2.0);
    let (x, y) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect() };
    let mx = filter_valid(x, dims, &taps);
    let my = filter_valid(y, dims, &taps);
    let mxx = filter_valid(&prod(&|p, _| p * p), dims, &taps);
    let myy = filter_valid(&prod(&|_, q| q * q), dims, &taps);
    let mxy = filter_valid(&prod(&|p, q| p * q), dims, &taps);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn check_same(a: &Volume, b: &Volume) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(dim_err!("volume shapes {:?} and {:?} differ", a.dims(), b.dims()));
    }
    Ok(())
}

/// PSNR over the whole volume.
pub fn psnr_volume(a: &Volume, b: &Volume, data_range: f64) -> Result<f64> {
    check_same(a, b)?;
    psnr(a.data(), b.data(), data_range)
}

/// Mean of per-slice PSNR along `plane`.
pub fn plane_psnr(a: &Volume, b: &Volume, plane: Plane, data_range: f64) -> Result<f64> {
    check_same(a, b)?;
    let n = a.slice_count(plane);
    let mut acc = 0.0;
    for i in 0..n {
        acc += psnr(
            a.slice(plane, i)?.pixels.data(),
            b.slice(plane, i)?.pixels.data(),
            data_range,
        )?;
    }
    Ok(acc / n as f64)
}

/// Mean of per-slice SSIM along `plane`.
pub fn plane_ssim(a: &Volume, b: &Volume, plane: Plane, params: &SsimParams) -> Result<f64> {
    check_same(a, b)?;
    let n = a.slice_count(plane);
    let mut acc = 0.0;
    for i in 0..n {
        acc += ssim(&a.slice(plane, i)?.pixels, &b.slice(plane, i)?.pixels, params)?;
    }
    Ok(acc / n as f64)
}

/// Added to the gradient normalizer so volumes flat within each slice stay finite.
pub const Z_DISCONTINUITY_FLOOR: f64 = 1e-6;

/// Inter-slice inconsistency along z: the mean absolute difference of
/// consecutive XY slices divided by the mean in-slice forward-difference
/// gradient magnitude (plus [`Z_DISCONTINUITY_FLOOR`]).
pub fn z_discontinuity(vol: &Volume) -> f64 {
    let [d1, d2, d3] = vol.dims();
    let mut across = 0.0;
    for z in 0..d3 - 1 {
        for y in 0..d2 {
            for x in 0..d1 {
                across += (vol.get(x, y, z + 1) - vol.get(x, y, z)).abs();
            }
        }
    }
    across /= (d1 * d2 * (d3 - 1)) as f64;
    let mut grad = 0.0;
    for z in 0..d3 {
        for y in 0..d2 - 1 {
            for x in 0..d1 - 1 {
                let v = vol.get(x, y, z);
                let gx = vol.get(x + 1, y, z) - v;
                let gy = vol.get(x, y + 1, z) - v;
                grad += libm::sqrt(gx * gx + gy * gy);
            }
        }
    }
    grad /= ((d1 - 1) * (d2 - 1) * d3) as f64;
    across / (grad + Z_DISCONTINUITY_FLOOR)
}
