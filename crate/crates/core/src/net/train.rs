//! Training objective, optimizer, and loop.
//!
//! One training sample is a slice pair `(x0, mu)` in the working domain, a
//! step `t`, and a noise draw `eps`. The network predicts `eps_hat` from
//! `x_t`; the loss compares the posterior reverse step taken with the
//! implied clean estimate against the one taken with the true `x0`.
//!
//! That residual equals `b_t (x0_hat - x0)`, where `b_t` is the posterior
//! weight of the clean state. [`StepWeighting::CleanSpace`] divides it out,
//! which measures the clean-estimate error directly and stops the steps near
//! `t = 1` from dominating the gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{layers, DenoiserNet};
use crate::error::{dim_err, Error, Result};
use crate::field::FeatureMap;
use crate::provider::Domain;
use crate::rng::{fill_normal, substream, Purpose, StreamKey};
use crate::sde::{estimate_x0, forward_with_noise, optimal_reverse, posterior_mean, reverse_noise_sensitivity, NoiseSchedule};
use crate::volume::{Plane, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

impl LossNorm {
    fn value(&self, d: f64) -> f64 {
        match self {
            LossNorm::L1 => d.abs(),
            LossNorm::L2 => d * d,
        }
    }

    fn derivative(&self, d: f64) -> f64 {
        match self {
            LossNorm::L1 => {
                if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossNorm::L2 => 2.0 * d,
        }
    }
}

/// Scale applied to each step's residual before the norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepWeighting {
    /// Unit weight for every step.
    #[default]
    Uniform,
    /// Residual divided by the posterior clean-state weight `b_t`.
    CleanSpace,
}

impl StepWeighting {
    pub fn scale(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            StepWeighting::Uniform => 1.0,
            StepWeighting::CleanSpace => 1.0 / sched.posterior_coefficients(t).1,
        }
    }
}

/// Norm and step weighting of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Loss {
    pub norm: LossNorm,
    pub weighting: StepWeighting,
}

impl From<LossNorm> for Loss {
    fn from(norm: LossNorm) -> Self {
        Self {
            norm,
            weighting: StepWeighting::Uniform,
        }
    }
}

impl Loss {
    fn mean(&self, d: &[f64], scale: f64) -> f64 {
        d.iter().map(|&v| self.norm.value(scale * v)).sum::<f64>() / d.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub x0: FeatureMap,
    pub mu: FeatureMap,
    pub eps: FeatureMap,
    pub t: usize,
}

impl TrainSample {
    /// Noisy state `x_t` of this sample.
    pub fn state(&self, sched: &NoiseSchedule) -> Result<FeatureMap> {
        let xt = forward_with_noise(self.x0.data(), self.mu.data(), self.eps.data(), self.t, sched)?;
        FeatureMap::new(self.x0.channels(), self.x0.dims(), xt)
    }

    fn check(&self) -> Result<()> {
        if self.x0.shape() != self.mu.shape() || self.x0.shape() != self.eps.shape() {
            return Err(dim_err!(
                "sample fields differ: x0 {:?}, mu {:?}, eps {:?}",
                self.x0.shape(),
                self.mu.shape(),
                self.eps.shape()
            ));
        }
        Ok(())
    }
}

/// Residual `r - x*` between the reverse step taken with `eps_hat` and the optimal one.
fn step_residual(sample: &TrainSample, xt: &[f64], eps_hat: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let mu = sample.mu.data();
    let x0_hat = estimate_x0(xt, mu, eps_hat, sample.t, sched, None)?;
    let r = posterior_mean(xt, &x0_hat, mu, sample.t, sched)?;
    let target = optimal_reverse(xt, sample.x0.data(), mu, sample.t, sched)?;
    Ok(r.iter().zip(&target).map(|(a, b)| a - b).collect())
}

/// Loss of one sample for a given noise prediction, averaged over elements.
pub fn step_loss(sample: &TrainSample, eps_hat: &FeatureMap, sched: &NoiseSchedule, loss: impl Into<Loss>) -> Result<f64> {
    let loss = loss.into();
    sample.check()?;
    if eps_hat.shape() != sample.x0.shape() {
        return Err(dim_err!("prediction {:?} vs sample {:?}", eps_hat.shape(), sample.x0.shape()));
    }
    let xt = sample.state(sched)?;
    let d = step_residual(sample, xt.data(), eps_hat.data(), sched)?;
    Ok(loss.mean(&d, loss.weighting.scale(sample.t, sched)))
}

fn sample_loss_and_grad(
    net: &DenoiserNet,
    sample: &TrainSample,
    sched: &NoiseSchedule,
    spec: Loss,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    sample.check()?;
    let xt = sample.state(sched)?;
    let input = net.assemble_input(&xt, &sample.mu, sample.t, sched.steps())?;
    net.check_input(&input)?;
    let (raw, tape) = layers::forward(net, &input, want_grad)?;
    let target = net.arch().target;
    let eps_hat = target.to_noise(raw, &xt, &sample.mu, sample.t, sched)?;
    let d = step_residual(sample, xt.data(), eps_hat.data(), sched)?;
    let n = d.len() as f64;
    let scale = spec.weighting.scale(sample.t, sched);
    let loss = spec.mean(&d, scale);
    let Some(tape) = tape else {
        return Ok((loss, None));
    };
    // r depends on the raw output element-wise with slope `sens`
    let sens = scale * reverse_noise_sensitivity(sample.t, sched) * target.noise_slope(sample.t, sched);
    let g_out: Vec<f64> = d.iter().map(|&v| spec.norm.derivative(scale * v) * sens / n).collect();
    let mut grads = vec![0.0; net.param_count()];
    layers::backward(net, &tape, &g_out, &mut grads)?;
    Ok((loss, Some(grads)))
}

#[cfg(feature = "std")]
fn map_samples<T: Send>(samples: &[TrainSample], f: impl Fn(&TrainSample) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    samples.par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
fn map_samples<T>(samples: &[TrainSample], f: impl Fn(&TrainSample) -> Result<T>) -> Result<Vec<T>> {
    samples.iter().map(f).collect()
}

/// Mean loss over `samples`.
pub fn batch_loss(net: &DenoiserNet, samples: &[TrainSample], sched: &NoiseSchedule, loss: impl Into<Loss>) -> Result<f64> {
    let loss = loss.into();
    if samples.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let losses = map_samples(samples, |s| sample_loss_and_grad(net, s, sched, loss, false).map(|(l, _)| l))?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Mean loss over `samples` and its gradient with respect to every parameter.
///
/// Per-sample gradients are summed in sample order, so the result does not
/// depend on the thread count.
pub fn batch_loss_and_grad(
    net: &DenoiserNet,
    samples: &[TrainSample],
    sched: &NoiseSchedule,
    loss: impl Into<Loss>,
) -> Result<(f64, Vec<f64>)> {
    let spec = loss.into();
    if samples.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let parts = map_samples(samples, |s| sample_loss_and_grad(net, s, sched, spec, true))?;
    let scale = 1.0 / samples.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; net.param_count()];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grads.iter_mut().zip(g.expect("gradient requested")) {
            *a += b;
        }
    }
    grads.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, grads))
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(dim_err!(
                "optimizer sized for {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let upd = self.lr * (self.m[i] / c1) / (libm::sqrt(self.v[i] / c2) + self.eps);
            if upd != 0.0 {
                params[i] -= upd;
            }
        }
        Ok(())
    }
}

/// Paired clean and corrupted volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub clean: Volume,
    pub corrupt: Volume,
}

/// Every slice of a set of pairs along one plane, mapped into a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceDataset {
    plane: Plane,
    domain: Domain,
    slices: Vec<(FeatureMap, FeatureMap)>,
}

impl SliceDataset {
    pub fn from_pairs(pairs: &[TrainingPair], plane: Plane, domain: Domain) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Dataset("no training pairs".into()));
        }
        let mut slices = Vec::new();
        for (k, p) in pairs.iter().enumerate() {
            if p.clean.dims() != p.corrupt.dims() {
                return Err(Error::Dataset(alloc::format!(
                    "pair {k}: clean {:?} and corrupted {:?} differ",
                    p.clean.dims(),
                    p.corrupt.dims()
                )));
            }
            for i in 0..p.clean.slice_count(plane) {
                let x0 = domain.forward(&p.clean.slice(plane, i)?.pixels)?;
                let mu = domain.forward(&p.corrupt.slice(plane, i)?.pixels)?;
                slices.push((x0, mu));
            }
        }
        let shape = slices[0].0.shape();
        if slices.iter().any(|(x, _)| x.shape() != shape) {
            return Err(Error::Dataset("slices of differing shapes".into()));
        }
        Ok(Self { plane, domain, slices })
    }

    /// Dataset from already-mapped `(x0, mu)` slice pairs.
    pub fn from_slices(plane: Plane, domain: Domain, slices: Vec<(FeatureMap, FeatureMap)>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::Dataset("no slices".into()));
        };
        let shape = first.0.shape();
        if slices.iter().any(|(x, m)| x.shape() != shape || m.shape() != shape) {
            return Err(Error::Dataset("slices of differing shapes".into()));
        }
        if shape.0 != domain.channels() {
            return Err(Error::Dataset(alloc::format!(
                "{} channels do not match the {:?} domain",
                shape.0,
                domain
            )));
        }
        Ok(Self { plane, domain, slices })
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn get(&self, i: usize) -> &(FeatureMap, FeatureMap) {
        &self.slices[i]
    }

    /// Draws the `b`-th sample of training step `step`.
    pub fn draw(&self, seed: u64, step: usize, b: usize, sched: &NoiseSchedule) -> TrainSample {
        let mut rng = substream(seed, StreamKey::new(Purpose::Training, step, Some(self.plane), b));
        let (x0, mu) = &self.slices[rng.random_range(0..self.slices.len())];
        let t = rng.random_range(1..=sched.steps());
        let mut eps = FeatureMap::zeros(x0.channels(), x0.dims());
        fill_normal(&mut rng, eps.data_mut());
        TrainSample {
            x0: x0.clone(),
            mu: mu.clone(),
            eps,
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Halve the learning rate every this many steps; 0 keeps it fixed.
    pub lr_halve_every: usize,
    pub norm: LossNorm,
    pub weighting: StepWeighting,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            lr_halve_every: 0,
            norm: LossNorm::L1,
            weighting: StepWeighting::Uniform,
            seed: 0,
        }
    }
}

/// Optimizes `net` on `data`; returns the raw per-step loss curve.
///
/// `observer` is called after every step with the step index and its loss.
pub fn train(
    net: &mut DenoiserNet,
    data: &SliceDataset,
    sched: &NoiseSchedule,
    opts: &TrainOptions,
    mut observer: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if opts.batch == 0 || !(opts.lr >= 0.0) {
        return Err(Error::Parameter(alloc::format!(
            "batch {} and learning rate {} must be positive",
            opts.batch,
            opts.lr
        )));
    }
    let channels = data.get(0).0.channels();
    if channels != net.arch().state_channels {
        return Err(Error::Dataset(alloc::format!(
            "dataset has {channels} channels, network expects {}",
            net.arch().state_channels
        )));
    }
    let mut adam = Adam::new(net.param_count(), opts.lr, opts.beta1, opts.beta2, opts.adam_eps);
    let mut curve = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        if opts.lr_halve_every > 0 && step > 0 && step % opts.lr_halve_every == 0 {
            adam.lr *= 0.5;
        }
        let batch: Vec<TrainSample> = (0..opts.batch).map(|b| data.draw(opts.seed, step, b, sched)).collect();
        let (loss, grads) = batch_loss_and_grad(
            net,
            &batch,
            sched,
            Loss {
                norm: opts.norm,
                weighting: opts.weighting,
            },
        )?;
        if !loss.is_finite() {
            return Err(Error::Numeric(alloc::format!("loss diverged at step {step}")));
        }
        adam.step(net.params_mut(), &grads)?;
        curve.push(loss);
        observer(step, loss);
    }
    Ok(curve)
}

/// Trailing moving average over `window` entries.
pub fn smooth(curve: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(curve.len());
    let mut acc = 0.0;
    for i in 0..curve.len() {
        acc += curve[i];
        if i >= w {
            acc -= curve[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
