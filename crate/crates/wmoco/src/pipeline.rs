//! Experiment building blocks shared by the CLI and the test suites.

use std::time::Instant;

use wmoco_core::metrics::{plane_psnr, plane_ssim, psnr_volume, z_discontinuity, SsimParams};
use wmoco_core::net::{train, DenoiserNet, SliceDataset, TrainingPair};
use wmoco_core::phantom::random_phantom;
use wmoco_core::sampler::{restore_2d_baseline_with_hooks, restore_with_hooks, Providers, SamplerHooks, StepEvent};
use wmoco_core::{Domain, Plane, Volume};

use crate::config::RunConfig;
use crate::error::Result;
use crate::motion::{corrupt, MotionReport, MotionSpec};

/// Phantom `id` and its corruption under `spec(id)`.
pub fn phantom_pair(id: u64, dims: [usize; 3], spec: &MotionSpec) -> Result<(TrainingPair, MotionReport)> {
    let clean = random_phantom(dims, id)?;
    let (corrupt, report) = corrupt(&clean, spec)?;
    Ok((TrainingPair { clean, corrupt }, report))
}

/// Trains a fresh network for `plane` on every slice of `pairs`.
pub fn train_plane(
    pairs: &[TrainingPair],
    plane: Plane,
    cfg: &RunConfig,
    observer: impl FnMut(usize, f64),
) -> Result<(DenoiserNet, Vec<f64>)> {
    let domain = cfg.domain()?;
    let data = SliceDataset::from_pairs(pairs, plane, domain)?;
    let mut net = DenoiserNet::new(cfg.architecture()?, plane, cfg.seed)?;
    let curve = train(&mut net, &data, &cfg.schedule()?, &cfg.train_options()?, observer)?;
    Ok((net, curve))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Alternating XY/XZ steps.
    Pseudo3d,
    /// XY only.
    Baseline2d,
}

/// Records the wall time of every reverse step.
#[derive(Debug)]
pub struct StepTimer {
    last: Instant,
    pub durations_ms: Vec<f64>,
    pub planes: Vec<Plane>,
}

impl StepTimer {
    pub fn start() -> Self {
        Self {
            last: Instant::now(),
            durations_ms: Vec::new(),
            planes: Vec::new(),
        }
    }
}

impl SamplerHooks for StepTimer {
    fn on_step(&mut self, event: &StepEvent<'_>) {
        let now = Instant::now();
        self.durations_ms.push((now - self.last).as_secs_f64() * 1e3);
        self.planes.push(event.plane);
        self.last = now;
    }
}

/// Runs the sampler with trained networks.
pub fn restore_volume(
    vt: &Volume,
    xy: &DenoiserNet,
    xz: &DenoiserNet,
    cfg: &RunConfig,
    mode: Mode,
    hooks: &mut dyn SamplerHooks,
) -> Result<Volume> {
    let sched = cfg.schedule()?;
    let scfg = cfg.sampler()?;
    Ok(match mode {
        Mode::Pseudo3d => restore_with_hooks(
            vt,
            Providers::new(&xy.provider(&sched), &xz.provider(&sched)),
            &sched,
            &scfg,
            hooks,
        )?,
        Mode::Baseline2d => restore_2d_baseline_with_hooks(vt, &xy.provider(&sched), &sched, &scfg, hooks)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub volume: String,
    /// `xy`, `xz`, `yz`, or `3d`.
    pub plane: String,
    pub metric: String,
    pub value: f64,
}

impl EvalRow {
    pub fn to_csv(&self) -> Vec<String> {
        let v = if self.value.is_infinite() {
            if self.value > 0.0 { "inf".into() } else { "-inf".into() }
        } else {
            format!("{}", self.value)
        };
        vec![self.volume.clone(), self.plane.clone(), self.metric.clone(), v]
    }
}

pub const EVAL_HEADER: [&str; 4] = ["volume", "plane", "metric", "value"];

/// Per-plane PSNR and SSIM, whole-volume PSNR, and the z-discontinuity of `pred`.
pub fn evaluate(id: &str, pred: &Volume, reference: &Volume) -> Result<Vec<EvalRow>> {
    let row = |plane: &str, metric: &str, value: f64| EvalRow {
        volume: id.into(),
        plane: plane.into(),
        metric: metric.into(),
        value,
    };
    let params = SsimParams::default();
    let mut rows = Vec::new();
    for plane in Plane::ALL {
        rows.push(row(plane.as_str(), "psnr", plane_psnr(pred, reference, plane, 1.0)?));
        rows.push(row(plane.as_str(), "ssim", plane_ssim(pred, reference, plane, &params)?));
    }
    rows.push(row("3d", "psnr", psnr_volume(pred, reference, 1.0)?));
    rows.push(row("3d", "z_discontinuity", z_discontinuity(pred)));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub slice_size: usize,
    pub mode: Domain,
    pub steps: usize,
    pub durations_ms: Vec<f64>,
}

impl BenchResult {
    pub fn mean_ms(&self) -> f64 {
        self.durations_ms.iter().sum::<f64>() / self.durations_ms.len() as f64
    }

    pub fn std_ms(&self) -> f64 {
        let m = self.mean_ms();
        let n = self.durations_ms.len();
        if n < 2 {
            return 0.0;
        }
        (self.durations_ms.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    pub fn median_ms(&self) -> f64 {
        let mut d = self.durations_ms.clone();
        d.sort_by(f64::total_cmp);
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2]
        } else {
            0.5 * (d[n / 2 - 1] + d[n / 2])
        }
    }

    pub fn to_csv(&self) -> Vec<String> {
        let mode = crate::checkpoint::domain_name(self.mode);
        vec![
            self.slice_size.to_string(),
            mode.into(),
            self.steps.to_string(),
            format!("{:.4}", self.mean_ms()),
            format!("{:.4}", self.std_ms()),
        ]
    }
}

pub const BENCH_HEADER: [&str; 5] = ["slice_size", "mode", "steps", "mean_ms", "std_ms"];

/// Times XY-plane sampler steps on a `size x size x depth` volume with
/// freshly initialized networks of the configured depth and width, once per
/// domain in `modes`.
pub fn bench(size: usize, depth: usize, steps: usize, modes: &[Domain], cfg: &RunConfig) -> Result<Vec<BenchResult>> {
    let vt = random_phantom([size, size, depth], cfg.seed)?;
    let mut out = Vec::new();
    for &mode in modes {
        let mut c = cfg.clone();
        c.domain = crate::checkpoint::domain_name(mode).into();
        c.steps = steps;
        let net = DenoiserNet::new(c.architecture()?, Plane::XY, c.seed)?;
        let mut timer = StepTimer::start();
        restore_volume(&vt, &net, &net, &c, Mode::Baseline2d, &mut timer)?;
        out.push(BenchResult {
            slice_size: size,
            mode,
            steps,
            durations_ms: timer.durations_ms,
        });
    }
    Ok(out)
}
