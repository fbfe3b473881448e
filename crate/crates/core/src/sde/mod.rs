//! Mean-reverting diffusion: forward marginals, the closed-form posterior
//! reverse step, and the clean-state estimator.
//!
//! All operations act element-wise on flat fields so they apply equally to
//! images, wavelet stacks, and whole volumes.

mod schedule;

use alloc::vec::Vec;

use rand::Rng;

pub use schedule::{NoiseSchedule, ScheduleKind, TERMINAL_DECAY};

use crate::error::{dim_err, Result};
use crate::rng::fill_normal;

/// Default clamp applied to intermediate clean-state estimates.
pub const X0_CLAMP: (f64, f64) = (-0.1, 1.1);

fn same_len(fields: &[&[f64]]) -> Result<usize> {
    let n = fields[0].len();
    if let Some(f) = fields.iter().find(|f| f.len() != n) {
        return Err(dim_err!("field lengths differ: {} vs {}", n, f.len()));
    }
    Ok(n)
}

/// `x_t = mu + (x0 - mu) exp(-theta_bar_t) + sqrt(v_t) eps` for a given noise draw.
pub fn forward_with_noise(x0: &[f64], mu: &[f64], eps: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    same_len(&[x0, mu, eps])?;
    sched.check_step(t)?;
    let decay = libm::exp(-sched.theta_bar(t));
    let sd = libm::sqrt(sched.var(t));
    Ok(x0
        .iter()
        .zip(mu)
        .zip(eps)
        .map(|((&x, &m), &e)| m + (x - m) * decay + sd * e)
        .collect())
}

/// Samples the forward marginal at step `t`; returns the state and the noise drawn.
pub fn forward_marginal<R: Rng + ?Sized>(
    x0: &[f64],
    mu: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = same_len(&[x0, mu])?;
    sched.check_step(t)?;
    let mut eps = alloc::vec![0.0; n];
    fill_normal(rng, &mut eps);
    let xt = forward_with_noise(x0, mu, &eps, t, sched)?;
    Ok((xt, eps))
}

/// Mean of the Gaussian posterior `p(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean(xt: &[f64], x0: &[f64], mu: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    same_len(&[xt, x0, mu])?;
    sched.check_reverse_step(t)?;
    let (a, b) = sched.posterior_coefficients(t);
    Ok(xt
        .iter()
        .zip(x0)
        .zip(mu)
        .map(|((&x, &c), &m)| a * (x - m) + b * (c - m) + m)
        .collect())
}

/// Draws `x_{t-1}` from the posterior with the clean state replaced by `x0_hat`.
pub fn posterior_step<R: Rng + ?Sized>(
    xt: &[f64],
    x0_hat: &[f64],
    mu: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut out = posterior_mean(xt, x0_hat, mu, t, sched)?;
    let var = sched.posterior_var(t);
    if var > 0.0 {
        let sd = libm::sqrt(var);
        let mut z = alloc::vec![0.0; out.len()];
        fill_normal(rng, &mut z);
        out.iter_mut().zip(&z).for_each(|(o, z)| *o += sd * z);
    }
    Ok(out)
}

/// Deterministic optimum of one reverse step given the true clean state.
pub fn optimal_reverse(xt: &[f64], x0: &[f64], mu: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
    posterior_mean(xt, x0, mu, t, sched)
}

/// Inverts the forward marginal for the clean state given predicted noise:
/// `x0_hat = exp(theta_bar_t) (x_t - mu - sqrt(v_t) eps_hat) + mu`.
pub fn estimate_x0(
    xt: &[f64],
    mu: &[f64],
    eps_hat: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    clamp: Option<(f64, f64)>,
) -> Result<Vec<f64>> {
    same_len(&[xt, mu, eps_hat])?;
    sched.check_reverse_step(t)?;
    let grow = libm::exp(sched.theta_bar(t));
    let sd = libm::sqrt(sched.var(t));
    Ok(xt
        .iter()
        .zip(mu)
        .zip(eps_hat)
        .map(|((&x, &m), &e)| {
            let v = grow * (x - m - sd * e) + m;
            match clamp {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect())
}

/// Derivative of the reverse-step output (posterior mean at `x0_hat`) with
/// respect to each predicted-noise element.
pub fn reverse_noise_sensitivity(t: usize, sched: &NoiseSchedule) -> f64 {
    let (_, b) = sched.posterior_coefficients(t);
    -b * libm::exp(sched.theta_bar(t)) * libm::sqrt(sched.var(t))
}

/// Score `grad log q_t = -eps / sqrt(v_t)`.
pub fn score_from_noise(eps: f64, t: usize, sched: &NoiseSchedule) -> f64 {
    -eps / libm::sqrt(sched.var(t))
}

pub fn noise_from_score(score: f64, t: usize, sched: &NoiseSchedule) -> f64 {
    -score * libm::sqrt(sched.var(t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::{substream, Purpose, StreamKey};
    use rand_chacha::ChaCha8Rng;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::build(100, 0.2, ScheduleKind::Cosine).unwrap()
    }

    fn rng(i: usize) -> ChaCha8Rng {
        substream(42, StreamKey::new(Purpose::Forward, i, None, 0))
    }

    #[test]
    fn degenerate_start() {
        let s = sched();
        let x0 = [0.1, 0.5, 0.9];
        let (xt, _) = forward_marginal(&x0, &[0.3; 3], 0, &s, &mut rng(0)).unwrap();
        assert!(xt.iter().zip(&x0).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn fixed_point_mean() {
        let s = sched();
        let n = 100_000;
        let mu = alloc::vec![0.4; n];
        let (xt, _) = forward_marginal(&mu, &mu, 37, &s, &mut rng(1)).unwrap();
        let mean = xt.iter().sum::<f64>() / n as f64;
        let se = libm::sqrt(s.var(37) / n as f64);
        assert!((mean - 0.4).abs() < 3.0 * se);
    }

    #[test]
    fn shape_mismatch() {
        let s = sched();
        assert!(matches!(
            forward_marginal(&[0.0; 3], &[0.0; 2], 1, &s, &mut rng(2)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn posterior_mean_fixed_point() {
        let s = sched();
        let mu = [0.25, 0.75];
        for t in 1..=100 {
            let m = posterior_mean(&mu, &mu, &mu, t, &s).unwrap();
            for (a, b) in m.iter().zip(&mu) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn first_step_is_deterministic() {
        let s = sched();
        let x0_hat = [0.2, 0.8, 0.6];
        let out = posterior_step(&[0.9, 0.1, 0.3], &x0_hat, &[0.5; 3], 1, &s, &mut rng(3)).unwrap();
        for (a, b) in out.iter().zip(&x0_hat) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((optimal_reverse(&[0.9], &[0.2], &[0.5], 1, &s).unwrap()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_step_rejected() {
        let s = sched();
        assert!(matches!(posterior_step(&[0.0], &[0.0], &[0.0], 0, &s, &mut rng(4)), Err(Error::Step(_))));
        assert!(matches!(optimal_reverse(&[0.0], &[0.0], &[0.0], 0, &s), Err(Error::Step(_))));
        assert!(matches!(posterior_step(&[0.0], &[0.0], &[0.0], 101, &s, &mut rng(4)), Err(Error::Step(_))));
    }

    #[test]
    fn estimate_inverts_forward() {
        let s = sched();
        let x0 = [0.0, 0.3, 0.55, 1.0];
        let mu = [0.6, 0.2, 0.9, 0.5];
        for t in [1, 10, 50, 100] {
            let (xt, eps) = forward_marginal(&x0, &mu, t, &s, &mut rng(t)).unwrap();
            let back = estimate_x0(&xt, &mu, &eps, t, &s, None).unwrap();
            for (a, b) in back.iter().zip(&x0) {
                assert!((a - b).abs() < 1e-6, "t = {t}");
            }
        }
        let fixed = estimate_x0(&mu, &mu, &[0.0; 4], 60, &s, Some(X0_CLAMP)).unwrap();
        for (a, b) in fixed.iter().zip(&mu) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_clamps() {
        let s = sched();
        let out = estimate_x0(&[5.0, -5.0], &[0.5, 0.5], &[0.0, 0.0], 50, &s, Some(X0_CLAMP)).unwrap();
        assert_eq!(out, [1.1, -0.1]);
    }

    #[test]
    fn optimal_reverse_equals_posterior_mean() {
        let s = sched();
        let mut r = rng(9);
        for t in [1, 2, 33, 100] {
            let v: Vec<f64> = (0..9).map(|_| r.random::<f64>()).collect();
            let (xt, x0, mu) = (&v[0..3], &v[3..6], &v[6..9]);
            let a = optimal_reverse(xt, x0, mu, t, &s).unwrap();
            let b = posterior_mean(xt, x0, mu, t, &s).unwrap();
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() <= 1e-12);
            }
            assert_eq!(optimal_reverse(&[0.4], &[0.4], &[0.4], t, &s).unwrap()[0], 0.4);
        }
    }

    #[test]
    fn sensitivity_matches_difference() {
        let s = sched();
        let (xt, mu) = ([0.7], [0.3]);
        for t in [1, 20, 99] {
            let h = 1e-6;
            let f = |e: f64| {
                let x0 = estimate_x0(&xt, &mu, &[e], t, &s, None).unwrap();
                posterior_mean(&xt, &x0, &mu, t, &s).unwrap()[0]
            };
            let fd = (f(0.1 + h) - f(0.1 - h)) / (2.0 * h);
            let d = reverse_noise_sensitivity(t, &s);
            assert!((fd - d).abs() < 1e-6 * d.abs().max(1.0));
        }
    }
}
