//! Trainable noise predictor built from wavelet residual blocks.
//!
//! Input channels are the state stack, the condition stack, and one
//! constant channel holding `t / T`. A stem convolution lifts them to
//! `width` channels; `levels` encoder stages (2x2 average pooling) and
//! mirrored decoder stages (nearest upsampling plus additive skip) each run
//! one residual block `x + Conv(SiLU(WTConv(SiLU(Conv(x)))))`; a linear
//! convolution head maps back to the state channels.
//!
//! With `width == 0` the network is a single linear convolution from the
//! input channels to the output.
//!
//! The raw output is either the noise itself ([`Target::Noise`]) or an
//! estimate of `x0 - mu` ([`Target::CleanResidual`]), which is turned into
//! noise in closed form: `eps = (x_t - mu - exp(-theta_bar_t) r) / sqrt(v_t)`.
//! The second keeps the regression target on the intensity scale at every
//! step instead of asking the network for a gain of `1 / sqrt(v_t)`.

mod layers;
mod train;
mod gradcheck;

use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::field::{ConvShape, FeatureMap};
use crate::provider::{NoiseProvider, StepContext};
use crate::rng::{substream, Purpose, StreamKey};
use crate::sde::NoiseSchedule;
use crate::volume::Plane;
use crate::wavelet::WtConvShape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use train::{
    batch_loss, batch_loss_and_grad, smooth, step_loss, train, Adam, Loss, LossNorm, SliceDataset, StepWeighting,
    TrainOptions, TrainSample, TrainingPair,
};

/// What the network's raw output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Target {
    /// The noise `eps` directly.
    #[default]
    Noise,
    /// The clean-state offset `x0 - mu`.
    CleanResidual,
}

impl Target {
    /// Slope and offset of `eps` as an affine map of the raw output `r`
    /// at one element: `eps = slope * r + offset(x_t, mu)`.
    fn slope(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self {
            Target::Noise => 1.0,
            Target::CleanResidual => -libm::exp(-sched.theta_bar(t)) / libm::sqrt(sched.var(t)),
        }
    }

    /// Noise implied by a raw output.
    pub fn to_noise(&self, raw: FeatureMap, state: &FeatureMap, cond: &FeatureMap, t: usize, sched: &NoiseSchedule) -> Result<FeatureMap> {
        sched.check_reverse_step(t)?;
        match self {
            Target::Noise => Ok(raw),
            Target::CleanResidual => {
                let slope = self.slope(t, sched);
                let sd = libm::sqrt(sched.var(t));
                let mut out = raw;
                for ((o, &x), &m) in out.data_mut().iter_mut().zip(state.data()).zip(cond.data()) {
                    *o = slope * *o + (x - m) / sd;
                }
                Ok(out)
            }
        }
    }

    /// `d eps / d raw`, the same for every element.
    pub fn noise_slope(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        self.slope(t, sched)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// Channels of the state (4 for a Haar stack, 1 for raw pixels).
    pub state_channels: usize,
    /// Feature width of the body; 0 selects the linear head-only model.
    pub width: usize,
    /// Encoder/decoder depth.
    pub levels: usize,
    /// Depth of each wavelet convolution.
    pub wt_levels: u32,
    pub kernel: usize,
    pub target: Target,
}

impl Architecture {
    pub fn new(state_channels: usize, width: usize, levels: usize) -> Self {
        Self {
            state_channels,
            width,
            levels,
            wt_levels: 2,
            kernel: 3,
            target: Target::Noise,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn linear(state_channels: usize, kernel: usize) -> Self {
        Self {
            state_channels,
            width: 0,
            levels: 0,
            wt_levels: 2,
            kernel,
            target: Target::Noise,
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.state_channels + 1
    }

    pub fn is_linear(&self) -> bool {
        self.width == 0
    }

    /// Required divisor of the input dims.
    pub fn spatial_multiple(&self) -> usize {
        if self.is_linear() {
            1
        } else {
            1 << (self.levels + self.wt_levels as usize)
        }
    }

    /// Pixel radius beyond which a single input perturbation cannot reach the output.
    pub fn influence_radius(&self) -> usize {
        let r = self.kernel / 2;
        if self.is_linear() {
            return r;
        }
        // wavelet conv at depth l: coefficients see +-r neighbours at scale 2^l
        let wt: usize = (1..=self.wt_levels as usize).map(|l| (r + 1) * (1 << l)).max().unwrap_or(0);
        let block = 2 * r + wt;
        let mut radius = 2 * r; // stem and head
        for e in 0..=self.levels {
            let scale = 1 << e;
            let blocks = if e == self.levels { 1 } else { 2 };
            // pooling / upsampling straddle one extra pixel per scale change
            radius += blocks * (block + 1) * scale;
        }
        radius
    }

    fn validate(&self) -> Result<()> {
        if self.state_channels == 0 || self.kernel % 2 == 0 {
            return Err(Error::Parameter(alloc::format!("invalid architecture {self:?}")));
        }
        if !self.is_linear() && self.wt_levels == 0 {
            return Err(Error::Parameter("wavelet convolution needs at least one level".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvParams {
    shape: ConvShape,
    w: Range<usize>,
    b: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockParams {
    conv1: ConvParams,
    wt_shape: WtConvShape,
    wt: Range<usize>,
    conv2: ConvParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    stem: Option<ConvParams>,
    enc: Vec<BlockParams>,
    dec: Vec<BlockParams>,
    head: ConvParams,
    total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut at = 0;
        let mut conv = |cin, cout, k| {
            let shape = ConvShape { cin, cout, k };
            let w = at..at + shape.weight_len();
            at = w.end;
            let b = at..at + cout;
            at = b.end;
            ConvParams { shape, w, b }
        };
        if arch.is_linear() {
            let head = conv(arch.input_channels(), arch.state_channels, arch.kernel);
            let total = head.b.end;
            return Self {
                stem: None,
                enc: Vec::new(),
                dec: Vec::new(),
                head,
                total,
            };
        }
        let c = arch.width;
        let stem = conv(arch.input_channels(), c, arch.kernel);
        let mut blocks = Vec::new();
        for _ in 0..(2 * arch.levels + 1) {
            let conv1 = conv(c, c, arch.kernel);
            blocks.push(conv1);
            let conv2 = conv(c, c, arch.kernel);
            blocks.push(conv2);
        }
        let head = conv(c, arch.state_channels, arch.kernel);
        // wavelet-convolution weights follow all dense convs
        let wt_shape = WtConvShape {
            channels: c,
            levels: arch.wt_levels,
            k: arch.kernel,
        };
        let mut at = head.b.end;
        let mut built = Vec::new();
        let mut it = blocks.into_iter();
        while let (Some(conv1), Some(conv2)) = (it.next(), it.next()) {
            let wt = at..at + wt_shape.weight_len();
            at = wt.end;
            built.push(BlockParams {
                conv1,
                wt_shape,
                wt,
                conv2,
            });
        }
        let dec = built.split_off(arch.levels + 1);
        Self {
            stem: Some(stem),
            enc: built,
            dec,
            head,
            total: at,
        }
    }
}

/// Noise predictor for one plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet {
    arch: Architecture,
    plane: Plane,
    layout: Layout,
    params: Vec<f64>,
}

impl DenoiserNet {
    /// Network with all weights zero.
    pub fn zeros(arch: Architecture, plane: Plane) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let params = alloc::vec![0.0; layout.total];
        Ok(Self {
            arch,
            plane,
            layout,
            params,
        })
    }

    /// Network with seeded random initialization.
    pub fn new(arch: Architecture, plane: Plane, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch, plane)?;
        let mut rng = substream(seed, StreamKey::new(Purpose::Init, 0, Some(plane), 0));
        let normal = |rng: &mut rand_chacha::ChaCha8Rng, sd: f64| -> f64 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            z * sd
        };
        let layout = net.layout.clone();
        let he = |s: &ConvShape| libm::sqrt(2.0 / (s.cin * s.k * s.k) as f64);
        let fill_conv = |params: &mut [f64], cp: &ConvParams, scale: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let sd = he(&cp.shape) * scale;
            for w in &mut params[cp.w.clone()] {
                *w = normal(rng, sd);
            }
        };
        if let Some(stem) = &layout.stem {
            fill_conv(&mut net.params, stem, 1.0, &mut rng);
        }
        for b in layout.enc.iter().chain(&layout.dec) {
            fill_conv(&mut net.params, &b.conv1, 1.0, &mut rng);
            fill_conv(&mut net.params, &b.conv2, 0.3, &mut rng);
            let k = b.wt_shape.k;
            let levels = b.wt_shape.levels as f64;
            for (i, w) in net.params[b.wt.clone()].iter_mut().enumerate() {
                let center = i % (k * k) == (k * k) / 2;
                let base = if center { 1.0 / levels } else { 0.0 };
                *w = base + 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let head_scale = if arch.is_linear() { 1.0 } else { 0.1 };
        fill_conv(&mut net.params, &layout.head, head_scale, &mut rng);
        Ok(net)
    }

    /// Rebuilds a network from stored parameters.
    pub fn from_params(arch: Architecture, plane: Plane, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(arch, plane)?;
        if params.len() != net.params.len() {
            return Err(Error::Weight(alloc::format!(
                "architecture needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Weight("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn plane(&self) -> Plane {
        self.plane
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat ranges of every bias vector, in layer order.
    pub fn bias_ranges(&self) -> Vec<Range<usize>> {
        let l = &self.layout;
        let mut out = Vec::new();
        if let Some(s) = &l.stem {
            out.push(s.b.clone());
        }
        for b in l.enc.iter().chain(&l.dec) {
            out.push(b.conv1.b.clone());
            out.push(b.conv2.b.clone());
        }
        out.push(l.head.b.clone());
        out
    }

    /// Flat range of the head's bias.
    pub fn head_bias_range(&self) -> Range<usize> {
        self.layout.head.b.clone()
    }

    /// Assembles the network input from state, condition, and step.
    pub fn assemble_input(&self, state: &FeatureMap, cond: &FeatureMap, t: usize, steps: usize) -> Result<FeatureMap> {
        let sc = self.arch.state_channels;
        if state.channels() != sc || cond.channels() != sc {
            return Err(dim_err!(
                "network expects {} state channels, got state {} and condition {}",
                sc,
                state.channels(),
                cond.channels()
            ));
        }
        if state.dims() != cond.dims() {
            return Err(dim_err!("state {:?} and condition {:?} differ", state.dims(), cond.dims()));
        }
        let time = FeatureMap::new(
            1,
            state.dims(),
            alloc::vec![t as f64 / steps as f64; state.plane_len()],
        )?;
        FeatureMap::concat(&[state, cond, &time])
    }

    fn check_input(&self, input: &FeatureMap) -> Result<()> {
        if input.channels() != self.arch.input_channels() {
            return Err(dim_err!(
                "network expects {} input channels, got {}",
                self.arch.input_channels(),
                input.channels()
            ));
        }
        let m = self.arch.spatial_multiple();
        let d = input.dims();
        if d[0] % m != 0 || d[1] % m != 0 || d[0] == 0 || d[1] == 0 {
            return Err(dim_err!(
                "input dims {}x{} not divisible by the network stride {}",
                d[0],
                d[1],
                m
            ));
        }
        Ok(())
    }

    /// Raw network output for an assembled input.
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(input)?;
        layers::forward(self, input, false).map(|(y, _)| y)
    }

    /// Raw output for one slice state.
    pub fn predict_raw(&self, state: &FeatureMap, cond: &FeatureMap, t: usize, steps: usize) -> Result<FeatureMap> {
        let input = self.assemble_input(state, cond, t, steps)?;
        self.forward(&input)
    }

    /// Predicted noise for one slice state.
    pub fn predict_noise(&self, state: &FeatureMap, cond: &FeatureMap, t: usize, sched: &NoiseSchedule) -> Result<FeatureMap> {
        let raw = self.predict_raw(state, cond, t, sched.steps())?;
        self.arch.target.to_noise(raw, state, cond, t, sched)
    }

    /// This network as a sampler provider under `sched`.
    pub fn provider<'a>(&'a self, sched: &'a NoiseSchedule) -> NetProvider<'a> {
        NetProvider { net: self, sched }
    }
}

/// A network paired with the schedule it was trained under.
#[derive(Debug, Clone, Copy)]
pub struct NetProvider<'a> {
    pub net: &'a DenoiserNet,
    pub sched: &'a NoiseSchedule,
}

impl NoiseProvider for NetProvider<'_> {
    fn predict(&self, state: &FeatureMap, cond: &FeatureMap, ctx: &StepContext) -> Result<FeatureMap> {
        if ctx.steps != self.sched.steps() {
            return Err(Error::Config(alloc::format!(
                "sampler runs {} steps, network schedule has {}",
                ctx.steps,
                self.sched.steps()
            )));
        }
        self.net.predict_noise(state, cond, ctx.step, self.sched)
    }

    fn spatial_multiple(&self) -> usize {
        self.net.arch.spatial_multiple()
    }
}
