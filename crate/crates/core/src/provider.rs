//! Noise-prediction interface and its non-learned implementations.
//!
//! A provider sees the state and the condition of one slice already mapped
//! into the sampler's working domain (a 4-channel Haar stack in wavelet
//! mode, a single channel in image mode) and returns predicted noise of the
//! same shape.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::field::{FeatureMap, Image};
use crate::sde::NoiseSchedule;
use crate::volume::{Plane, Volume};
use crate::wavelet::{dwt2, idwt2, SubbandImage};

/// Representation the reverse chain runs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    /// One-level Haar subband stack at half resolution.
    Wavelet,
    /// Raw pixels.
    Image,
}

impl Domain {
    /// Channels a single-channel slice occupies in this domain.
    pub fn channels(&self) -> usize {
        match self {
            Domain::Wavelet => 4,
            Domain::Image => 1,
        }
    }

    /// Spatial dims of a slice of `dims` in this domain.
    pub fn map_dims(&self, dims: [usize; 2]) -> [usize; 2] {
        match self {
            Domain::Wavelet => [dims[0] / 2, dims[1] / 2],
            Domain::Image => dims,
        }
    }

    pub fn forward(&self, img: &Image) -> Result<FeatureMap> {
        match self {
            Domain::Wavelet => Ok(dwt2(img)?.stack()),
            Domain::Image => FeatureMap::new(1, img.dims(), img.data().to_vec()),
        }
    }

    pub fn inverse(&self, map: &FeatureMap) -> Result<Image> {
        match self {
            Domain::Wavelet => idwt2(&SubbandImage::unstack(map)?),
            Domain::Image => {
                if map.channels() != 1 {
                    return Err(dim_err!("image domain expects 1 channel, found {}", map.channels()));
                }
                Image::new(map.dims(), map.data().to_vec())
            }
        }
    }
}

/// Where a prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepContext {
    pub step: usize,
    pub steps: usize,
    pub plane: Plane,
    pub index: usize,
    pub domain: Domain,
}

pub trait NoiseProvider: Sync {
    /// Predicted noise for `state` at `ctx`, same shape as `state`.
    fn predict(&self, state: &FeatureMap, cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap>;

    /// Required divisor of the provider's input dims.
    fn spatial_multiple(&self) -> usize {
        1
    }
}

impl<P: NoiseProvider + ?Sized> NoiseProvider for &P {
    fn predict(&self, state: &FeatureMap, cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap> {
        (**self).predict(state, cond, ctx)
    }

    fn spatial_multiple(&self) -> usize {
        (**self).spatial_multiple()
    }
}

/// Noise fields keyed by `(step, plane, slice)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseStore {
    entries: BTreeMap<(usize, Plane, usize), FeatureMap>,
}

impl NoiseStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, step: usize, plane: Plane, index: usize, eps: FeatureMap) {
        self.entries.insert((step, plane, index), eps);
    }

    pub fn get(&self, step: usize, plane: Plane, index: usize) -> Option<&FeatureMap> {
        self.entries.get(&(step, plane, index))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, Plane, usize), &FeatureMap)> {
        self.entries.iter()
    }
}

/// Replays recorded noise; an unrecorded key is an error.
#[derive(Debug, Clone)]
pub struct OracleProvider {
    store: NoiseStore,
}

impl OracleProvider {
    pub fn new(store: NoiseStore) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &NoiseStore {
        &self.store
    }
}

impl NoiseProvider for OracleProvider {
    fn predict(&self, state: &FeatureMap, _cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap> {
        let eps = self.store.get(ctx.step, ctx.plane, ctx.index).ok_or(Error::Lookup {
            step: ctx.step,
            plane: ctx.plane,
            index: ctx.index,
        })?;
        if eps.shape() != state.shape() {
            return Err(dim_err!(
                "recorded noise has shape {:?}, state has {:?}",
                eps.shape(),
                state.shape()
            ));
        }
        Ok(eps.clone())
    }
}

/// Knows the clean volume and returns the noise that explains the current
/// state exactly: `(x_t - mu - (x0 - mu) exp(-theta_bar_t)) / sqrt(v_t)`.
/// Used to record oracle stores.
#[derive(Debug, Clone)]
pub struct ExactNoiseProvider {
    clean: Volume,
    sched: NoiseSchedule,
}

impl ExactNoiseProvider {
    pub fn new(clean: Volume, sched: NoiseSchedule) -> Self {
        Self { clean, sched }
    }
}

impl NoiseProvider for ExactNoiseProvider {
    fn predict(&self, state: &FeatureMap, cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap> {
        let x0 = ctx.domain.forward(&self.clean.slice(ctx.plane, ctx.index)?.pixels)?;
        if x0.shape() != state.shape() || cond.shape() != state.shape() {
            return Err(dim_err!("state {:?} does not match clean slice {:?}", state.shape(), x0.shape()));
        }
        let decay = libm::exp(-self.sched.theta_bar(ctx.step));
        let sd = libm::sqrt(self.sched.var(ctx.step));
        let data = state
            .data()
            .iter()
            .zip(cond.data())
            .zip(x0.data())
            .map(|((&x, &m), &c)| (x - m - (c - m) * decay) / sd)
            .collect();
        FeatureMap::new(state.channels(), state.dims(), data)
    }
}

/// Mean and variance of the step-`t` marginal for data `N(m, s2)` pulled toward `mu`.
pub fn gaussian_marginal(m: f64, s2: f64, mu: f64, t: usize, sched: &NoiseSchedule) -> (f64, f64) {
    let decay = libm::exp(-sched.theta_bar(t));
    (mu + (m - mu) * decay, s2 * decay * decay + sched.var(t))
}

/// Exact noise prediction `sqrt(v_t) (x - mean_t) / var_t` for Gaussian data.
pub fn gaussian_eps(x: f64, m: f64, s2: f64, mu: f64, t: usize, sched: &NoiseSchedule) -> f64 {
    let (mean, var) = gaussian_marginal(m, s2, mu, t, sched);
    libm::sqrt(sched.var(t)) * (x - mean) / var
}

/// Analytic provider for per-voxel independent Gaussian data with mean
/// volume `mean` and shared variance `s2`.
#[derive(Debug, Clone)]
pub struct GaussianProvider {
    mean: Volume,
    s2: f64,
    sched: NoiseSchedule,
}

impl GaussianProvider {
    pub fn new(mean: Volume, s2: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(s2 >= 0.0) || !s2.is_finite() {
            return Err(Error::Parameter(alloc::format!(
                "prior variance must be non-negative, got {s2}"
            )));
        }
        Ok(Self { mean, s2, sched })
    }

    pub fn variance(&self) -> f64 {
        self.s2
    }
}

impl NoiseProvider for GaussianProvider {
    fn predict(&self, state: &FeatureMap, cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap> {
        // orthonormal transforms keep i.i.d. variance, so only the mean changes domain
        let m = ctx.domain.forward(&self.mean.slice(ctx.plane, ctx.index)?.pixels)?;
        if m.shape() != state.shape() || cond.shape() != state.shape() {
            return Err(dim_err!("state {:?} does not match prior mean {:?}", state.shape(), m.shape()));
        }
        let data: Vec<f64> = state
            .data()
            .iter()
            .zip(cond.data())
            .zip(m.data())
            .map(|((&x, &mu), &mm)| gaussian_eps(x, mm, self.s2, mu, ctx.step, &self.sched))
            .collect();
        FeatureMap::new(state.channels(), state.dims(), data)
    }
}
