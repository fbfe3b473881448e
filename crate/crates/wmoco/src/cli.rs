//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};
use wmoco_core::net::{DenoiserNet, TrainingPair};
use wmoco_core::provider::{ExactNoiseProvider, NoiseStore, OracleProvider};
use wmoco_core::sampler::{restore_2d_baseline_with_hooks, restore_with_hooks, Providers, SamplerHooks, StepEvent};
use wmoco_core::{Domain, FeatureMap, Plane, StepContext};

use crate::checkpoint::{self, domain_name, domain_of};
use crate::config::{init_threads, RunConfig};
use crate::error::{Error, Result};
use crate::io::{load_volume, save_volume, write_csv, write_json};
use crate::motion::{corrupt, MotionSpec};
use crate::pipeline::{self, phantom_pair, train_plane, BENCH_HEADER, EVAL_HEADER};
use crate::store;

#[derive(Debug, Parser)]
#[command(name = "wmoco", version, about = "Pseudo-3D wavelet-domain diffusion restoration of motion-corrupted volumes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corrupt a volume with simulated rigid motion.
    Simulate(SimulateArgs),
    /// Generate paired phantom volumes for training or evaluation.
    Phantom(PhantomArgs),
    /// Train one plane's noise predictor on a directory of pairs.
    Train(TrainArgs),
    /// Restore a corrupted volume.
    Restore(RestoreArgs),
    /// Record the exact noise of a reverse run for oracle replay.
    RecordNoise(RecordArgs),
    /// Compare a volume against a reference.
    Eval(EvalArgs),
    /// Time sampler steps in the wavelet and image domains.
    Bench(BenchArgs),
}

/// Options that override the run configuration.
#[derive(Debug, Args, Default, Clone)]
pub struct ConfigArgs {
    /// JSON configuration file; explicit flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Diffusion steps T.
    #[arg(long)]
    pub diffusion_steps: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_parser = ["mod2", "probabilistic"])]
    pub alternation: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = ["wavelet", "image"])]
    pub domain: Option<String>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = ["l1", "l2"])]
    pub loss: Option<String>,
    /// What the network predicts.
    #[arg(long, value_parser = ["clean_residual", "noise"])]
    pub target: Option<String>,
    /// Loss weighting across diffusion steps.
    #[arg(long, value_parser = ["clean", "uniform"])]
    pub weighting: Option<String>,
    /// Dump the working volume every N reverse steps.
    #[arg(long)]
    pub dump_every: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut m = Map::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                m.insert(k.into(), v);
            }
        };
        put("seed", self.seed.map(Value::from));
        put("threads", self.threads.map(Value::from));
        put("steps", self.diffusion_steps.map(Value::from));
        put("lambda", self.lambda.map(Value::from));
        put("alternation", self.alternation.clone().map(Value::from));
        put("alpha", self.alpha.map(Value::from));
        put("domain", self.domain.clone().map(Value::from));
        put("width", self.width.map(Value::from));
        put("levels", self.levels.map(Value::from));
        put("train_steps", self.train_steps.map(Value::from));
        put("batch", self.batch.map(Value::from));
        put("lr", self.lr.map(Value::from));
        put("loss", self.loss.clone().map(Value::from));
        put("target", self.target.clone().map(Value::from));
        put("weighting", self.weighting.clone().map(Value::from));
        put("dump_every", self.dump_every.map(Value::from));
        let cfg = RunConfig::resolve(self.config.as_deref(), m)?;
        init_threads(cfg.threads);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Mild,
    Severe,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Motion report path (default: `<out>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with_all = ["mmin", "mmax"])]
    pub preset: Option<Preset>,
    #[arg(long, requires = "mmax")]
    pub mmin: Option<f64>,
    #[arg(long, requires = "mmin")]
    pub mmax: Option<f64>,
    #[arg(long, default_value_t = 3)]
    pub events: usize,
    #[arg(long, default_value_t = 3.0)]
    pub max_translation: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_rotation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Output directory for `<id>.clean.vol` / `<id>.corrupt.vol` pairs.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub count: u64,
    /// First phantom id; ids are also the phantom and motion seeds.
    #[arg(long, default_value_t = 0)]
    pub first_id: u64,
    /// Edge length of the cubic volumes.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, value_enum, default_value = "mild")]
    pub preset: Preset,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `<id>.clean.vol` / `<id>.corrupt.vol` pairs.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["xy", "xz"])]
    pub plane: String,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV (default: `<out>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub progress: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RestoreMode {
    /// Alternating XY/XZ steps.
    #[value(name = "3d")]
    Pseudo3d,
    /// XY steps only.
    #[value(name = "2d")]
    Baseline2d,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, required_unless_present = "oracle")]
    pub xy: Option<PathBuf>,
    #[arg(long)]
    pub xz: Option<PathBuf>,
    /// Replay a recorded-noise file instead of running networks.
    #[arg(long, conflicts_with_all = ["xy", "xz"])]
    pub oracle: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "3d")]
    pub mode: RestoreMode,
    #[arg(long)]
    pub progress: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// Corrupted volume the chain starts from.
    #[arg(long)]
    pub input: PathBuf,
    /// Clean volume that defines the exact noise.
    #[arg(long)]
    pub clean: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "3d")]
    pub mode: RestoreMode,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Volume id written in the first column (default: the prediction's file stem).
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Slice edge lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [64usize, 240])]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values = ["wavelet", "image"], value_parser = ["wavelet", "image"])]
    pub modes: Vec<String>,
    /// Timed reverse steps per mode.
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// Slices per volume.
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes the effective configuration next to `out`.
fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_json(with_suffix(out, ".config.json"), cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Phantom(a) => phantom(a),
        Command::Train(a) => train_cmd(a),
        Command::Restore(a) => restore_cmd(a),
        Command::RecordNoise(a) => record(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let vol = load_volume(&a.input)?;
    let mut spec = match (a.preset, a.mmin, a.mmax) {
        (Some(Preset::Mild), ..) | (None, None, None) => MotionSpec::mild(a.seed),
        (Some(Preset::Severe), ..) => MotionSpec::severe(a.seed),
        (None, Some(lo), Some(hi)) => MotionSpec::with_range(lo, hi, a.seed),
        _ => return Err(Error::Config("--mmin and --mmax go together".into())),
    };
    spec.n_events = a.events;
    spec.max_translation = a.max_translation;
    spec.max_rotation = a.max_rotation;
    let (out, report) = corrupt(&vol, &spec)?;
    save_volume(&out, &a.out)?;
    write_json(a.report.unwrap_or_else(|| with_suffix(&a.out, ".report.json")), &report)
}

fn phantom(a: PhantomArgs) -> Result<()> {
    for id in a.first_id..a.first_id + a.count {
        let spec = match a.preset {
            Preset::Mild => MotionSpec::mild(id),
            Preset::Severe => MotionSpec::severe(id),
        };
        let (pair, report) = phantom_pair(id, [a.size; 3], &spec)?;
        save_volume(&pair.clean, a.out_dir.join(format!("{id}.clean.vol")))?;
        save_volume(&pair.corrupt, a.out_dir.join(format!("{id}.corrupt.vol")))?;
        write_json(a.out_dir.join(format!("{id}.report.json")), &report)?;
    }
    Ok(())
}

/// Reads every `<id>.clean.vol` / `<id>.corrupt.vol` pair in `dir`, sorted by id.
pub fn load_pairs(dir: &Path) -> Result<Vec<(String, TrainingPair)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    let mut corrupt_ids = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(".clean.vol") {
            ids.push(id.to_string());
        } else if let Some(id) = name.strip_suffix(".corrupt.vol") {
            corrupt_ids.push(id.to_string());
        }
    }
    ids.sort();
    corrupt_ids.sort();
    if ids != corrupt_ids {
        let lone: Vec<_> = ids
            .iter()
            .filter(|i| !corrupt_ids.contains(i))
            .chain(corrupt_ids.iter().filter(|i| !ids.contains(i)))
            .collect();
        return Err(Error::data(dir, format!("unpaired volumes: {lone:?}")));
    }
    if ids.is_empty() {
        return Err(Error::data(dir, "no <id>.clean.vol / <id>.corrupt.vol pairs"));
    }
    ids.into_iter()
        .map(|id| {
            let clean = load_volume(dir.join(format!("{id}.clean.vol")))?;
            let corrupt = load_volume(dir.join(format!("{id}.corrupt.vol")))?;
            if clean.dims() != corrupt.dims() {
                return Err(Error::data(dir, format!("pair {id}: shapes {:?} and {:?}", clean.dims(), corrupt.dims())));
            }
            Ok((id, TrainingPair { clean, corrupt }))
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let plane = Plane::parse(&a.plane).expect("validated by clap");
    let pairs: Vec<TrainingPair> = load_pairs(&a.data)?.into_iter().map(|(_, p)| p).collect();
    let progress = a.progress;
    let (net, curve) = train_plane(&pairs, plane, &cfg, |step, loss| {
        if progress && step % 100 == 0 {
            eprintln!("step {step:>6}  loss {loss:.6}");
        }
    })?;
    checkpoint::save(&net, &cfg.schedule()?, &a.out)?;
    let rows: Vec<Vec<String>> = curve.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.to_string()]).collect();
    write_csv(a.loss_csv.unwrap_or_else(|| with_suffix(&a.out, ".loss.csv")), &["step", "loss"], &rows)?;
    echo_config(&cfg, &a.out)
}

/// Progress printing, periodic dumps, and step timing for a sampler run.
struct RunHooks {
    progress: bool,
    dump_every: usize,
    dump_prefix: PathBuf,
    timer: pipeline::StepTimer,
    dump_error: Option<Error>,
    record: Option<NoiseStore>,
}

impl SamplerHooks for RunHooks {
    fn on_prediction(&mut self, ctx: &StepContext, eps: &FeatureMap) {
        if let Some(s) = &mut self.record {
            s.on_prediction(ctx, eps);
        }
    }

    fn on_step(&mut self, event: &StepEvent<'_>) {
        self.timer.on_step(event);
        if self.progress {
            let ms = self.timer.durations_ms.last().copied().unwrap_or(0.0);
            eprintln!("step {:>5}  {}  {ms:.1} ms", event.step, event.plane);
        }
        if self.dump_every > 0 && event.step % self.dump_every == 0 && self.dump_error.is_none() {
            let path = with_suffix(&self.dump_prefix, &format!(".step{}.vol", event.step - 1));
            if let Err(e) = save_volume(event.state, path) {
                self.dump_error = Some(e);
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct Timing {
    total_seconds: f64,
    per_step_mean_ms: f64,
    steps: usize,
    wavelet: bool,
    mode: String,
}

fn load_plane_checkpoint(path: &Path, want: Plane, cfg: &RunConfig) -> Result<DenoiserNet> {
    let (m, net) = checkpoint::load(path)?;
    if m.steps != cfg.steps || m.lambda != cfg.lambda {
        return Err(Error::Config(format!(
            "{} was trained with {} steps and lambda {}, the run uses {} and {}",
            path.display(),
            m.steps,
            m.lambda,
            cfg.steps,
            cfg.lambda
        )));
    }
    if net.plane() != want {
        return Err(Error::Config(format!(
            "{} holds the {} network, expected {}",
            path.display(),
            m.plane,
            want
        )));
    }
    Ok(net)
}

fn restore_cmd(a: RestoreArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    let vt = load_volume(&a.input)?;
    let sched = cfg.schedule()?;
    let mut hooks = RunHooks {
        progress: a.progress,
        dump_every: cfg.dump_every,
        dump_prefix: a.out.clone(),
        timer: pipeline::StepTimer::start(),
        dump_error: None,
        record: None,
    };
    let started = Instant::now();
    let restored = if let Some(path) = &a.oracle {
        let oracle = OracleProvider::new(store::load(path)?);
        let scfg = cfg.sampler()?;
        match a.mode {
            RestoreMode::Pseudo3d => restore_with_hooks(&vt, Providers::shared(&oracle), &sched, &scfg, &mut hooks)?,
            RestoreMode::Baseline2d => restore_2d_baseline_with_hooks(&vt, &oracle, &sched, &scfg, &mut hooks)?,
        }
    } else {
        let xy = load_plane_checkpoint(a.xy.as_deref().expect("required by clap"), Plane::XY, &cfg)?;
        let xz = match (a.mode, &a.xz) {
            (RestoreMode::Pseudo3d, None) => return Err(Error::Config("3d mode needs --xz".into())),
            (_, Some(p)) => load_plane_checkpoint(p, Plane::XZ, &cfg)?,
            (RestoreMode::Baseline2d, None) => xy.clone(),
        };
        let (dx, dz) = (domain_of(xy.arch())?, domain_of(xz.arch())?);
        if dx != dz || dx != cfg.domain()? {
            return Err(Error::Config(format!(
                "checkpoint domains ({}, {}) disagree with the configured {} domain",
                domain_name(dx),
                domain_name(dz),
                cfg.domain
            )));
        }
        cfg.domain = domain_name(dx).into();
        let mode = match a.mode {
            RestoreMode::Pseudo3d => pipeline::Mode::Pseudo3d,
            RestoreMode::Baseline2d => pipeline::Mode::Baseline2d,
        };
        pipeline::restore_volume(&vt, &xy, &xz, &cfg, mode, &mut hooks)?
    };
    if let Some(e) = hooks.dump_error.take() {
        return Err(e);
    }
    let total = started.elapsed().as_secs_f64();
    save_volume(&restored, &a.out)?;
    let d = &hooks.timer.durations_ms;
    let timing = Timing {
        total_seconds: total,
        per_step_mean_ms: d.iter().sum::<f64>() / d.len().max(1) as f64,
        steps: d.len(),
        wavelet: cfg.domain()? == Domain::Wavelet,
        mode: match a.mode {
            RestoreMode::Pseudo3d => "3d".into(),
            RestoreMode::Baseline2d => "2d".into(),
        },
    };
    write_json(with_suffix(&a.out, ".timing.json"), &timing)?;
    echo_config(&cfg, &a.out)
}

fn record(a: RecordArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let vt = load_volume(&a.input)?;
    let clean = load_volume(&a.clean)?;
    let sched = cfg.schedule()?;
    let scfg = cfg.sampler()?;
    let exact = ExactNoiseProvider::new(clean, sched.clone());
    let mut hooks = NoiseStore::new();
    match a.mode {
        RestoreMode::Pseudo3d => restore_with_hooks(&vt, Providers::shared(&exact), &sched, &scfg, &mut hooks)?,
        RestoreMode::Baseline2d => restore_2d_baseline_with_hooks(&vt, &exact, &sched, &scfg, &mut hooks)?,
    };
    store::save(&hooks, &a.out)?;
    echo_config(&cfg, &a.out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = load_volume(&a.pred)?;
    let reference = load_volume(&a.reference)?;
    let id = a.id.unwrap_or_else(|| {
        let name = a.pred.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        name.strip_suffix(".vol").unwrap_or(&name).to_string()
    });
    let rows = pipeline::evaluate(&id, &pred, &reference)?;
    let rows: Vec<Vec<String>> = rows.iter().map(|r| r.to_csv()).collect();
    write_csv(&a.out, &EVAL_HEADER, &rows)
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let modes: Vec<Domain> = a
        .modes
        .iter()
        .map(|m| checkpoint::parse_domain(m).expect("validated by clap"))
        .collect();
    let mut rows = Vec::new();
    for &size in &a.sizes {
        for r in pipeline::bench(size, a.depth, a.steps, &modes, &cfg)? {
            rows.push(r.to_csv());
        }
    }
    write_csv(&a.out, &BENCH_HEADER, &rows)?;
    echo_config(&cfg, &a.out)
}
