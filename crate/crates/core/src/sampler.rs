//! Pseudo-3D reverse diffusion alternating between XY and XZ slices.
//!
//! The working volume starts at the forward marginal of the corrupted input
//! at `t = T` and walks down to `t = 0`. Each step picks a plane, maps every
//! slice of that plane (and the matching slice of the condition) into the
//! working domain, asks that plane's provider for the noise, and writes back
//! one posterior draw. Reads within a step come from the frozen state of the
//! previous step.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::field::{FeatureMap, Image};
use crate::provider::{NoiseProvider, NoiseStore, StepContext};
use crate::rng::{fill_normal, substream, Purpose, StreamKey};
use crate::sde::{estimate_x0, posterior_step, NoiseSchedule, X0_CLAMP};
use crate::volume::{Plane, Volume};

pub use crate::provider::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternation {
    /// XY on even steps, XZ on odd steps.
    DeterministicMod2,
    /// XY with probability `alpha / (alpha + beta)` at every step.
    Probabilistic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// Weight of the XY prior; the XZ weight is `1 - alpha`.
    pub alpha: f64,
    pub alternation: Alternation,
    pub domain: Domain,
    /// Range for intermediate clean-state estimates, applied in image space.
    pub x0_clamp: Option<(f64, f64)>,
    pub output_clamp: (f64, f64),
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            alternation: Alternation::DeterministicMod2,
            domain: Domain::Wavelet,
            x0_clamp: Some(X0_CLAMP),
            output_clamp: (0.0, 1.0),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(alloc::format!(
                "plane weight alpha = {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.alternation == Alternation::DeterministicMod2 && self.alpha != 0.5 {
            return Err(Error::Config(alloc::format!(
                "deterministic alternation implies alpha = 0.5, got {}",
                self.alpha
            )));
        }
        if self.output_clamp.0 > self.output_clamp.1 {
            return Err(Error::Config("output clamp range is empty".into()));
        }
        Ok(())
    }
}

/// Plane used at reverse step `t`.
pub fn choose_plane(t: usize, cfg: &SamplerConfig) -> Plane {
    match cfg.alternation {
        Alternation::DeterministicMod2 => {
            if t % 2 == 0 {
                Plane::XY
            } else {
                Plane::XZ
            }
        }
        Alternation::Probabilistic => {
            let p = cfg.alpha / (cfg.alpha + cfg.beta());
            let mut rng = substream(cfg.seed, StreamKey::new(Purpose::PlaneChoice, t, None, 0));
            if rng.random::<f64>() < p {
                Plane::XY
            } else {
                Plane::XZ
            }
        }
    }
}

/// One provider per sampling plane.
#[derive(Clone, Copy)]
pub struct Providers<'a> {
    pub xy: &'a dyn NoiseProvider,
    pub xz: &'a dyn NoiseProvider,
}

impl<'a> Providers<'a> {
    pub fn new(xy: &'a dyn NoiseProvider, xz: &'a dyn NoiseProvider) -> Self {
        Self { xy, xz }
    }

    /// The same provider for both planes.
    pub fn shared(p: &'a dyn NoiseProvider) -> Self {
        Self { xy: p, xz: p }
    }

    fn get(&self, plane: Plane) -> &'a dyn NoiseProvider {
        match plane {
            Plane::XZ => self.xz,
            _ => self.xy,
        }
    }
}

/// State after a completed reverse step.
pub struct StepEvent<'a> {
    /// Step just executed; the state now holds `x_{step - 1}`.
    pub step: usize,
    pub plane: Plane,
    pub state: &'a Volume,
}

/// Observation points of a sampler run, called in deterministic order.
pub trait SamplerHooks {
    fn on_prediction(&mut self, _ctx: &StepContext, _eps: &FeatureMap) {}
    fn on_step(&mut self, _event: &StepEvent<'_>) {}
}

impl SamplerHooks for () {}

impl SamplerHooks for NoiseStore {
    fn on_prediction(&mut self, ctx: &StepContext, eps: &FeatureMap) {
        self.insert(ctx.step, ctx.plane, ctx.index, eps.clone());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PlaneRule {
    Alternate,
    Fixed(Plane),
}

/// Restores `vt` by alternating-plane reverse diffusion.
pub fn restore(vt: &Volume, providers: Providers<'_>, sched: &NoiseSchedule, cfg: &SamplerConfig) -> Result<Volume> {
    run(vt, providers, sched, cfg, PlaneRule::Alternate, &mut ())
}

/// [`restore`] with observation hooks.
pub fn restore_with_hooks(
    vt: &Volume,
    providers: Providers<'_>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    hooks: &mut dyn SamplerHooks,
) -> Result<Volume> {
    run(vt, providers, sched, cfg, PlaneRule::Alternate, hooks)
}

/// Slice-wise 2D restoration: every step uses the XY plane.
pub fn restore_2d_baseline(
    vt: &Volume,
    provider_xy: &dyn NoiseProvider,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<Volume> {
    restore_2d_baseline_with_hooks(vt, provider_xy, sched, cfg, &mut ())
}

pub fn restore_2d_baseline_with_hooks(
    vt: &Volume,
    provider_xy: &dyn NoiseProvider,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    hooks: &mut dyn SamplerHooks,
) -> Result<Volume> {
    run(
        vt,
        Providers::shared(provider_xy),
        sched,
        cfg,
        PlaneRule::Fixed(Plane::XY),
        hooks,
    )
}

fn check_provider(vt: &Volume, plane: Plane, p: &dyn NoiseProvider, domain: Domain) -> Result<()> {
    let dims = domain.map_dims(vt.slice_dims(plane));
    let m = p.spatial_multiple();
    if dims[0] % m != 0 || dims[1] % m != 0 {
        return Err(Error::Config(alloc::format!(
            "{plane} slices map to {}x{} in the {:?} domain, not divisible by the provider stride {m}",
            dims[0],
            dims[1],
            domain
        )));
    }
    Ok(())
}

struct SliceUpdate {
    index: usize,
    eps: FeatureMap,
    next: Image,
}

fn run(
    vt: &Volume,
    providers: Providers<'_>,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    rule: PlaneRule,
    hooks: &mut dyn SamplerHooks,
) -> Result<Volume> {
    cfg.validate()?;
    let planes: &[Plane] = match rule {
        PlaneRule::Alternate => &[Plane::XY, Plane::XZ],
        PlaneRule::Fixed(p) => match p {
            Plane::XY => &[Plane::XY],
            _ => &[Plane::XZ],
        },
    };
    for &plane in planes {
        check_provider(vt, plane, providers.get(plane), cfg.domain)?;
    }

    let steps = sched.steps();
    let mut state = terminal_state(vt, sched, cfg.seed)?;
    for t in (1..=steps).rev() {
        let plane = match rule {
            PlaneRule::Alternate => choose_plane(t, cfg),
            PlaneRule::Fixed(p) => p,
        };
        let provider = providers.get(plane);
        let count = state.slice_count(plane);
        let frozen = &state;
        let update = |index: usize| step_slice(frozen, vt, provider, sched, cfg, t, plane, index);
        #[cfg(feature = "std")]
        let updates: Result<Vec<SliceUpdate>> = {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(update).collect()
        };
        #[cfg(not(feature = "std"))]
        let updates: Result<Vec<SliceUpdate>> = (0..count).map(update).collect();
        let updates = updates?;

        let mut next = state.clone();
        for u in &updates {
            let ctx = StepContext {
                step: t,
                steps,
                plane,
                index: u.index,
                domain: cfg.domain,
            };
            hooks.on_prediction(&ctx, &u.eps);
            next.put_slice(plane, u.index, &u.next)?;
        }
        state = next;
        hooks.on_step(&StepEvent {
            step: t,
            plane,
            state: &state,
        });
    }
    state.clamp(cfg.output_clamp.0, cfg.output_clamp.1);
    Ok(state)
}

/// `x_T = v_T + sqrt(v_T-variance) eps`: the forward marginal with `x0 = mu = v_T`.
fn terminal_state(vt: &Volume, sched: &NoiseSchedule, seed: u64) -> Result<Volume> {
    let steps = sched.steps();
    let mut rng = substream(seed, StreamKey::new(Purpose::TerminalNoise, steps, None, 0));
    let mut eps = alloc::vec![0.0; vt.len()];
    fill_normal(&mut rng, &mut eps);
    let sd = libm::sqrt(sched.var(steps));
    let data = vt.data().iter().zip(&eps).map(|(v, e)| v + sd * e).collect();
    Volume::new(vt.dims(), data)
}

#[allow(clippy::too_many_arguments)]
fn step_slice(
    state: &Volume,
    cond: &Volume,
    provider: &dyn NoiseProvider,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    t: usize,
    plane: Plane,
    index: usize,
) -> Result<SliceUpdate> {
    let domain = cfg.domain;
    let x = domain.forward(&state.slice(plane, index)?.pixels)?;
    let mu = domain.forward(&cond.slice(plane, index)?.pixels)?;
    let ctx = StepContext {
        step: t,
        steps: sched.steps(),
        plane,
        index,
        domain,
    };
    let eps = provider.predict(&x, &mu, &ctx)?;
    if eps.shape() != x.shape() {
        return Err(dim_err!(
            "provider returned shape {:?} for state {:?}",
            eps.shape(),
            x.shape()
        ));
    }
    let mut x0 = estimate_x0(x.data(), mu.data(), eps.data(), t, sched, None)?;
    if let Some((lo, hi)) = cfg.x0_clamp {
        let est = FeatureMap::new(x.channels(), x.dims(), x0)?;
        let mut img = domain.inverse(&est)?;
        img.data_mut().iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        x0 = domain.forward(&img)?.into_data();
    }
    let mut rng = substream(cfg.seed, StreamKey::new(Purpose::PosteriorNoise, t, Some(plane), index));
    let prev = posterior_step(x.data(), &x0, mu.data(), t, sched, &mut rng)?;
    if prev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(alloc::format!(
            "non-finite state at step {t}, {plane} slice {index}"
        )));
    }
    let next = domain.inverse(&FeatureMap::new(x.channels(), x.dims(), prev)?)?;
    Ok(SliceUpdate { index, eps, next })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{ExactNoiseProvider, GaussianProvider, OracleProvider};
    use crate::sde::ScheduleKind;

    fn sched(t: usize) -> NoiseSchedule {
        NoiseSchedule::build(t, 0.2, ScheduleKind::Cosine).unwrap()
    }

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, |x, y, z| {
            0.5 + 0.4 * libm::sin(0.7 * x as f64 + 0.3 * y as f64 - 0.5 * z as f64)
        })
        .unwrap()
    }

    #[test]
    fn deterministic_alternation() {
        let cfg = SamplerConfig::default();
        assert_eq!(choose_plane(100, &cfg), Plane::XY);
        assert_eq!(choose_plane(99, &cfg), Plane::XZ);
    }

    #[test]
    fn degenerate_weights_always_xy() {
        let cfg = SamplerConfig {
            alpha: 1.0,
            alternation: Alternation::Probabilistic,
            ..Default::default()
        };
        assert!((1..=500).all(|t| choose_plane(t, &cfg) == Plane::XY));
    }

    #[test]
    fn balanced_probabilistic_fraction() {
        let cfg = SamplerConfig {
            alternation: Alternation::Probabilistic,
            seed: 17,
            ..Default::default()
        };
        let xy = (1..=10_000).filter(|&t| choose_plane(t, &cfg) == Plane::XY).count();
        let frac = xy as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&frac), "{frac}");
    }

    #[test]
    fn config_validation() {
        let bad = SamplerConfig {
            alpha: 0.7,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = SamplerConfig {
            alpha: 1.5,
            alternation: Alternation::Probabilistic,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[derive(Default)]
    struct Coverage {
        per_step: Vec<(usize, Plane, usize)>,
        planes: Vec<Plane>,
    }

    impl SamplerHooks for Coverage {
        fn on_prediction(&mut self, ctx: &StepContext, _eps: &FeatureMap) {
            match self.per_step.last_mut() {
                Some((s, _, n)) if *s == ctx.step => *n += 1,
                _ => self.per_step.push((ctx.step, ctx.plane, 1)),
            }
        }
        fn on_step(&mut self, e: &StepEvent<'_>) {
            self.planes.push(e.plane);
        }
    }

    #[test]
    fn oracle_chain_and_coverage() {
        let s = sched(10);
        let clean = ramp([8, 6, 4]);
        let mut corrupt = clean.clone();
        corrupt.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = (*v + 0.1 * ((i % 7) as f64 - 3.0)).clamp(0.0, 1.0));
        let cfg = SamplerConfig { seed: 3, ..Default::default() };
        let exact = ExactNoiseProvider::new(clean.clone(), s.clone());
        let mut store = NoiseStore::new();
        restore_with_hooks(&corrupt, Providers::shared(&exact), &s, &cfg, &mut store).unwrap();
        let oracle = OracleProvider::new(store);
        let mut cov = Coverage::default();
        let out = restore_with_hooks(&corrupt, Providers::shared(&oracle), &s, &cfg, &mut cov).unwrap();
        assert!(out.max_abs_diff(&clean) < 1e-4);
        for (step, plane, n) in &cov.per_step {
            let want = if *plane == Plane::XY { 4 } else { 6 };
            assert_eq!(*n, want, "step {step}");
        }
        let xy = cov.planes.iter().filter(|p| **p == Plane::XY).count();
        assert_eq!(xy, 5);
        assert_eq!(cov.planes.len(), 10);
    }

    #[test]
    fn reproducible_and_in_range() {
        let s = sched(6);
        let v = ramp([8, 8, 8]);
        let prior = GaussianProvider::new(Volume::filled([8, 8, 8], 0.5).unwrap(), 0.01, s.clone()).unwrap();
        let cfg = SamplerConfig { seed: 9, ..Default::default() };
        let a = restore(&v, Providers::shared(&prior), &s, &cfg).unwrap();
        let b = restore(&v, Providers::shared(&prior), &s, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), v.dims());
        assert!(a.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn single_step_returns_estimate() {
        let s = NoiseSchedule::from_thetas(&[0.8], 0.2).unwrap();
        let v = ramp([4, 4, 4]);
        let prior = GaussianProvider::new(Volume::filled([4, 4, 4], 0.5).unwrap(), 0.02, s.clone()).unwrap();
        let cfg = SamplerConfig {
            seed: 5,
            x0_clamp: None,
            output_clamp: (f64::NEG_INFINITY, f64::INFINITY),
            ..Default::default()
        };
        let out = restore(&v, Providers::shared(&prior), &s, &cfg).unwrap();
        let xt = terminal_state(&v, &s, 5).unwrap();
        // t = 1 is odd, so the XZ plane runs; with beta_tilde_1 = 0 the output is the estimate itself
        for j in 0..4 {
            let x = Domain::Wavelet.forward(&xt.slice(Plane::XZ, j).unwrap().pixels).unwrap();
            let mu = Domain::Wavelet.forward(&v.slice(Plane::XZ, j).unwrap().pixels).unwrap();
            let ctx = StepContext { step: 1, steps: 1, plane: Plane::XZ, index: j, domain: Domain::Wavelet };
            let eps = prior.predict(&x, &mu, &ctx).unwrap();
            let est = estimate_x0(x.data(), mu.data(), eps.data(), 1, &s, None).unwrap();
            let img = Domain::Wavelet.inverse(&FeatureMap::new(4, x.dims(), est).unwrap()).unwrap();
            let got = out.slice(Plane::XZ, j).unwrap().pixels;
            for (a, b) in img.data().iter().zip(got.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baseline_equals_xy_only_probabilistic() {
        let s = sched(8);
        let v = ramp([8, 8, 4]);
        let prior = GaussianProvider::new(Volume::filled([8, 8, 4], 0.4).unwrap(), 0.01, s.clone()).unwrap();
        let cfg = SamplerConfig {
            alpha: 1.0,
            alternation: Alternation::Probabilistic,
            seed: 11,
            ..Default::default()
        };
        let a = restore(&v, Providers::shared(&prior), &s, &cfg).unwrap();
        let b = restore_2d_baseline(&v, &prior, &s, &cfg).unwrap();
        assert_eq!(a, b);
    }

    struct Strided;
    impl NoiseProvider for Strided {
        fn predict(&self, state: &FeatureMap, _c: &FeatureMap, _x: &StepContext) -> Result<FeatureMap> {
            Ok(FeatureMap::zeros(state.channels(), state.dims()))
        }
        fn spatial_multiple(&self) -> usize {
            8
        }
    }

    struct WrongShape;
    impl NoiseProvider for WrongShape {
        fn predict(&self, _s: &FeatureMap, _c: &FeatureMap, _x: &StepContext) -> Result<FeatureMap> {
            Ok(FeatureMap::zeros(1, [1, 1]))
        }
    }

    #[test]
    fn configuration_errors() {
        let s = sched(4);
        let v = ramp([16, 16, 4]);
        let cfg = SamplerConfig::default();
        assert!(matches!(
            restore(&v, Providers::shared(&Strided), &s, &cfg),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            restore(&v, Providers::shared(&WrongShape), &s, &cfg),
            Err(Error::Dimension(_))
        ));
    }
}
