use std::time::{Duration, Instant};

use wmoco_core::metrics::z_discontinuity;
use wmoco_core::phantom::random_phantom;
use wmoco_core::provider::GaussianProvider;
use wmoco_core::sampler::{restore_2d_baseline, Alternation, Providers};
use wmoco_core::sde::ScheduleKind;
use wmoco_core::{restore, Domain, NoiseSchedule, SamplerConfig, Volume};

/// Output mean and variance of one voxel for Gaussian data `N(m, s2)`,
/// propagated through the linear reverse chain in closed form.
fn chain_moments(m: f64, s2: f64, mu: f64, sched: &NoiseSchedule) -> (f64, f64) {
    let (mut mean, mut var) = (mu, sched.var(sched.steps()));
    for t in (1..=sched.steps()).rev() {
        let d = (-sched.theta_bar(t)).exp();
        let g = s2 * d / (s2 * d * d + sched.var(t));
        let (a, b) = sched.posterior_coefficients(t);
        let x0 = m + g * (mean - mu - (m - mu) * d);
        mean = mu + a * (mean - mu) + b * (x0 - mu);
        var = (a + b * g) * (a + b * g) * var + sched.posterior_var(t);
    }
    (mean, var)
}

#[test]
fn xy_only_gaussian_mean_matches_closed_form() {
    let sched = NoiseSchedule::build(40, 0.2, ScheduleKind::Cosine).unwrap();
    let s2 = 0.02;
    let prior = Volume::from_fn([4, 4, 2], |x, y, z| 0.3 + 0.1 * (x + y + 2 * z) as f64 / 4.0).unwrap();
    let vt = Volume::filled([4, 4, 2], 0.6).unwrap();
    let provider = GaussianProvider::new(prior.clone(), s2, sched.clone()).unwrap();
    let runs = 200;
    let mut sum = vec![0.0; prior.len()];
    for seed in 0..runs {
        let cfg = SamplerConfig {
            alpha: 1.0,
            alternation: Alternation::Probabilistic,
            domain: Domain::Image,
            x0_clamp: None,
            output_clamp: (f64::NEG_INFINITY, f64::INFINITY),
            seed,
        };
        let out = restore(&vt, Providers::shared(&provider), &sched, &cfg).unwrap();
        sum.iter_mut().zip(out.data()).for_each(|(s, v)| *s += v);
    }
    for i in 0..prior.len() {
        let (want, var) = chain_moments(prior.data()[i], s2, 0.6, &sched);
        let se = (var / runs as f64).sqrt();
        let got = sum[i] / runs as f64;
        assert!((got - want).abs() <= 4.0 * se, "voxel {i}: {got} vs {want} (se {se})");
    }
}

#[test]
fn restores_32_cubed_in_bounded_time() {
    let sched = NoiseSchedule::build(100, 50.0 / 255.0, ScheduleKind::Cosine).unwrap();
    let clean = random_phantom([32, 32, 32], 1).unwrap();
    let vt = Volume::new(clean.dims(), clean.data().iter().map(|v| 0.8 * v + 0.1).collect()).unwrap();
    let provider = GaussianProvider::new(clean, 0.0, sched.clone()).unwrap();
    let start = Instant::now();
    let cfg = SamplerConfig::default();
    let pseudo = restore(&vt, Providers::shared(&provider), &sched, &cfg).unwrap();
    let flat = restore_2d_baseline(&vt, &provider, &sched, &cfg).unwrap();
    assert!(start.elapsed() < Duration::from_secs(120));
    for out in [&pseudo, &flat] {
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(z_discontinuity(out).is_finite());
    }
}
