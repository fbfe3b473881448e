//! Finite-difference verification of training gradients.

use alloc::vec::Vec;

use rand::seq::index::sample;

use super::train::{batch_loss, batch_loss_and_grad, Loss, TrainSample};
use super::DenoiserNet;
use crate::error::Result;
use crate::rng::{substream, Purpose, StreamKey};
use crate::sde::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter index where the worst error occurred.
    pub worst: usize,
    pub checked: usize,
}

/// Below this magnitude both gradients count as zero.
const ZERO: f64 = 1e-12;

/// Compares the analytic gradient of the batch loss with central differences
/// of step `h` at `n_weights` parameters drawn from `seed` (all of them if
/// the net is smaller).
pub fn grad_check(
    net: &DenoiserNet,
    samples: &[TrainSample],
    sched: &NoiseSchedule,
    loss: impl Into<Loss>,
    n_weights: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let loss = loss.into();
    let (_, grads) = batch_loss_and_grad(net, samples, sched, loss)?;
    let total = net.param_count();
    let mut rng = substream(seed, StreamKey::new(Purpose::Init, 0, None, 1));
    let mut idx: Vec<usize> = sample(&mut rng, total, n_weights.min(total)).into_vec();
    idx.sort_unstable();
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: 0,
        checked: 0,
    };
    for &i in &idx {
        let w = net.params()[i];
        probe.params_mut()[i] = w + h;
        let up = batch_loss(&probe, samples, sched, loss)?;
        probe.params_mut()[i] = w - h;
        let down = batch_loss(&probe, samples, sched, loss)?;
        probe.params_mut()[i] = w;
        let fd = (up - down) / (2.0 * h);
        let a = grads[i];
        let scale = a.abs().max(fd.abs());
        let rel = if scale < ZERO { 0.0 } else { (a - fd).abs() / scale };
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = i;
        }
        report.checked += 1;
    }
    Ok(report)
}
