//! Restoration of motion-corrupted 3D volumes with a mean-reverting
//! diffusion process driven by two orthogonal 2D noise predictors.
//!
//! The crate is `no_std` with `alloc`. Enabling the `std` feature scores
//! the slices of one sampler step in parallel with rayon; results are
//! bit-identical to the serial path because every random draw comes from
//! a substream keyed by (step, plane, slice).
//!
//! Layout:
//! - [`field`] 2D images, multi-channel feature maps, and the convolution kernels
//! - [`volume`] dense volumes and orthogonal slicing
//! - [`wavelet`] orthonormal Haar transform and wavelet convolution
//! - [`sde`] noise schedule, forward marginals, posterior reverse step
//! - [`provider`] noise-prediction interface with oracle and analytic backends
//! - [`net`] trainable wavelet-residual denoiser, training loop, gradient check
//! - [`sampler`] alternating-plane reverse diffusion
//! - [`metrics`] PSNR, SSIM, and inter-slice discontinuity
//! - [`phantom`] synthetic ellipsoid volumes
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod error;
pub mod field;
pub mod metrics;
pub mod net;
pub mod phantom;
pub mod provider;
pub mod rng;
pub mod sampler;
pub mod sde;
pub mod volume;
pub mod wavelet;

pub use error::{Error, Result};
pub use field::{FeatureMap, Image};
pub use provider::{NoiseProvider, StepContext};
pub use sampler::{restore, restore_2d_baseline, Alternation, Domain, SamplerConfig};
pub use sde::NoiseSchedule;
pub use volume::{Plane, Slice, Volume};
pub use wavelet::SubbandImage;
