//! Counter-based random substreams.
//!
//! Every random draw in the sampler and the trainer comes from a ChaCha
//! stream selected by a [`StreamKey`], so the order in which slices are
//! processed never changes the numbers they receive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::volume::Plane;

/// What a substream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    TerminalNoise = 1,
    PosteriorNoise = 2,
    PlaneChoice = 3,
    Training = 4,
    Init = 5,
    Motion = 6,
    Phantom = 7,
    Forward = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub purpose: Purpose,
    pub step: u32,
    pub plane: Option<Plane>,
    pub index: u32,
}

impl StreamKey {
    pub fn new(purpose: Purpose, step: usize, plane: Option<Plane>, index: usize) -> Self {
        Self {
            purpose,
            step: step as u32,
            plane,
            index: index as u32,
        }
    }

    fn word(&self) -> u64 {
        let plane = self.plane.map_or(0xf, |p| p.id() as u64);
        ((self.purpose as u64) << 58) | (plane << 54) | ((self.step as u64 & 0x3ff_ffff) << 28) | (self.index as u64 & 0xfff_ffff)
    }
}

/// Deterministic generator for `key` under the run-level `seed`.
pub fn substream(seed: u64, key: StreamKey) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(key.word());
    rng
}

/// Fills `out` with independent standard normal draws.
pub fn fill_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> alloc::vec::Vec<f64> {
    let mut v = alloc::vec![0.0; n];
    fill_normal(rng, &mut v);
    v
}
