//! Run configuration shared by the CLI commands.
//!
//! Effective values come from the defaults, then a JSON file, then explicit
//! command-line flags, later sources winning.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use wmoco_core::net::{Architecture, LossNorm, StepWeighting, Target, TrainOptions};
use wmoco_core::sde::{NoiseSchedule, ScheduleKind, X0_CLAMP};
use wmoco_core::{Alternation, Domain, SamplerConfig};

use crate::checkpoint::{parse_domain, parse_target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Diffusion steps T.
    pub steps: usize,
    /// Stationary noise scale.
    pub lambda: f64,
    /// `mod2` or `probabilistic`.
    pub alternation: String,
    pub alpha: f64,
    /// `wavelet` or `image`.
    pub domain: String,
    pub clamp_x0: bool,
    pub width: usize,
    pub levels: usize,
    pub wt_levels: u32,
    pub kernel: usize,
    pub train_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    /// `l1` or `l2`.
    pub loss: String,
    /// Network output: `clean_residual` or `noise`.
    pub target: String,
    /// Step weighting of the loss: `clean` or `uniform`.
    pub weighting: String,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Dump the working volume every this many steps; 0 disables.
    pub dump_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 100,
            lambda: 50.0 / 255.0,
            alternation: "mod2".into(),
            alpha: 0.5,
            domain: "wavelet".into(),
            clamp_x0: true,
            width: 16,
            levels: 1,
            wt_levels: 2,
            kernel: 3,
            train_steps: 8000,
            batch: 8,
            lr: 2e-3,
            lr_halve_every: 1500,
            loss: "l1".into(),
            target: "clean_residual".into(),
            weighting: "clean".into(),
            threads: 0,
            dump_every: 0,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: Map<String, Value>) -> Result<Self> {
        let mut merged = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let obj = merged.as_object_mut().expect("object");
        if let Some(path) = file {
            let v: Value = crate::io::read_json(path)?;
            let Value::Object(m) = v else {
                return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
            };
            obj.extend(m);
        }
        obj.extend(overrides);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        self.alternation()?;
        self.norm()?;
        self.target()?;
        self.weighting()?;
        if self.steps == 0 || !(self.lambda > 0.0) {
            return Err(Error::Config("steps and lambda must be positive".into()));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<Domain> {
        parse_domain(&self.domain).ok_or_else(|| Error::Config(format!("unknown domain {:?}", self.domain)))
    }

    pub fn alternation(&self) -> Result<Alternation> {
        match self.alternation.as_str() {
            "mod2" => Ok(Alternation::DeterministicMod2),
            "probabilistic" => Ok(Alternation::Probabilistic),
            s => Err(Error::Config(format!("unknown alternation {s:?}"))),
        }
    }

    pub fn norm(&self) -> Result<LossNorm> {
        match self.loss.as_str() {
            "l1" => Ok(LossNorm::L1),
            "l2" => Ok(LossNorm::L2),
            s => Err(Error::Config(format!("unknown loss {s:?}"))),
        }
    }

    pub fn target(&self) -> Result<Target> {
        parse_target(&self.target).ok_or_else(|| Error::Config(format!("unknown target {:?}", self.target)))
    }

    pub fn weighting(&self) -> Result<StepWeighting> {
        match self.weighting.as_str() {
            "clean" => Ok(StepWeighting::CleanSpace),
            "uniform" => Ok(StepWeighting::Uniform),
            s => Err(Error::Config(format!("unknown weighting {s:?}"))),
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::build(self.steps, self.lambda, ScheduleKind::Cosine)?)
    }

    pub fn sampler(&self) -> Result<SamplerConfig> {
        let cfg = SamplerConfig {
            alpha: self.alpha,
            alternation: self.alternation()?,
            domain: self.domain()?,
            x0_clamp: self.clamp_x0.then_some(X0_CLAMP),
            output_clamp: (0.0, 1.0),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn architecture(&self) -> Result<Architecture> {
        Ok(Architecture {
            state_channels: self.domain()?.channels(),
            width: self.width,
            levels: self.levels,
            wt_levels: self.wt_levels,
            kernel: self.kernel,
            target: self.target()?,
        })
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        Ok(TrainOptions {
            steps: self.train_steps,
            batch: self.batch,
            lr: self.lr,
            lr_halve_every: self.lr_halve_every,
            norm: self.norm()?,
            weighting: self.weighting()?,
            seed: self.seed,
            ..TrainOptions::default()
        })
    }
}

/// Caps rayon's global pool; a no-op once the pool exists.
pub fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}
