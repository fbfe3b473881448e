use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Floor of `exp(-2 theta_bar)` reached by the cosine schedule at `t = T`.
pub const TERMINAL_DECAY: f64 = 5e-5;

/// Offset of the cosine profile, keeps the first steps from vanishing.
const COSINE_OFFSET: f64 = 0.008;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Cosine,
}

/// Per-step tables of a discrete mean-reverting process.
///
/// Index `t` runs over `0..=T`. `theta[0]` is unused and zero; the unit step
/// convention makes `theta_prime[t] == theta[t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    lambda: f64,
    theta: Vec<f64>,
    theta_bar: Vec<f64>,
    var: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule of `steps` steps with stationary standard deviation `lambda`.
    pub fn build(steps: usize, lambda: f64, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Parameter(alloc::format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        check_lambda(lambda)?;
        match kind {
            ScheduleKind::Cosine => {
                let profile = |t: usize| {
                    let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    let c = libm::cos(u * FRAC_PI_2);
                    let c0 = libm::cos(COSINE_OFFSET / (1.0 + COSINE_OFFSET) * FRAC_PI_2);
                    (c * c) / (c0 * c0)
                };
                let theta_bar: Vec<f64> = (0..=steps)
                    .map(|t| {
                        if t == 0 {
                            0.0
                        } else {
                            let decay = TERMINAL_DECAY + (1.0 - TERMINAL_DECAY) * profile(t).max(0.0);
                            -0.5 * libm::log(decay)
                        }
                    })
                    .collect();
                Self::from_theta_bar(theta_bar, lambda)
            }
        }
    }

    /// Schedule from explicit per-step rates `theta[1..=T]`.
    pub fn from_thetas(thetas: &[f64], lambda: f64) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Parameter("schedule needs at least one step".into()));
        }
        let mut theta_bar = Vec::with_capacity(thetas.len() + 1);
        theta_bar.push(0.0);
        let mut acc = 0.0;
        for &th in thetas {
            acc += th;
            theta_bar.push(acc);
        }
        check_lambda(lambda)?;
        Self::from_theta_bar(theta_bar, lambda)
    }

    fn from_theta_bar(theta_bar: Vec<f64>, lambda: f64) -> Result<Self> {
        let mut theta = Vec::with_capacity(theta_bar.len());
        theta.push(0.0);
        for t in 1..theta_bar.len() {
            let th = theta_bar[t] - theta_bar[t - 1];
            if !(th > 0.0 && th.is_finite()) {
                return Err(Error::Parameter(alloc::format!(
                    "mean-reversion rate at step {t} must be positive and finite, got {th}"
                )));
            }
            theta.push(th);
        }
        let var = theta_bar
            .iter()
            .map(|&tb| lambda * lambda * one_minus_exp_neg2(tb))
            .collect();
        Ok(Self {
            lambda,
            theta,
            theta_bar,
            var,
        })
    }

    /// Total number of steps `T`.
    pub fn steps(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn theta(&self, t: usize) -> f64 {
        self.theta[t]
    }

    pub fn theta_prime(&self, t: usize) -> f64 {
        self.theta[t]
    }

    pub fn theta_bar(&self, t: usize) -> f64 {
        self.theta_bar[t]
    }

    pub fn theta_bar_table(&self) -> &[f64] {
        &self.theta_bar
    }

    /// Marginal variance `lambda^2 (1 - exp(-2 theta_bar_t))`.
    pub fn var(&self, t: usize) -> f64 {
        self.var[t]
    }

    /// Diffusion coefficient under the stationarity constraint `sigma^2 = 2 lambda^2 theta`.
    pub fn sigma(&self, t: usize) -> f64 {
        libm::sqrt(2.0 * self.lambda * self.lambda * self.theta[t])
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::Step(alloc::format!(
                "step {t} exceeds schedule length {}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_reverse_step(&self, t: usize) -> Result<()> {
        if t == 0 {
            return Err(Error::Step("reverse step needs t >= 1".into()));
        }
        self.check_step(t)
    }

    /// Weights `(a, b)` of the posterior mean
    /// `a (x_t - mu) + b (x_0 - mu) + mu`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        let tb = self.theta_bar[t];
        let tb_prev = self.theta_bar[t - 1];
        let tp = self.theta[t];
        let denom = one_minus_exp_neg2(tb);
        let a = one_minus_exp_neg2(tb_prev) / denom * libm::exp(-tp);
        let b = one_minus_exp_neg2(tp) / denom * libm::exp(-tb_prev);
        (a, b)
    }

    /// Unit-scale posterior variance; the sampled variance is `lambda^2` times this.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        let tb = self.theta_bar[t];
        let tb_prev = self.theta_bar[t - 1];
        let tp = self.theta[t];
        one_minus_exp_neg2(tb_prev) * one_minus_exp_neg2(tp) / one_minus_exp_neg2(tb)
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.lambda * self.lambda * self.beta_tilde(t)
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(alloc::format!(
            "stationary scale must be positive, got {lambda}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn one_minus_exp_neg2(x: f64) -> f64 {
    -libm::expm1(-2.0 * x)
}
