//! Synthetic ellipsoid volumes for experiments and tests.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::rng::{substream, Purpose, StreamKey};
use crate::volume::Volume;

/// Ellipsoid in normalized coordinates (`[-1, 1]` along every axis),
/// rotated by `angle` radians about z, adding `intensity` inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        let (s, c) = (libm::sin(self.angle), libm::cos(self.angle));
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        let u = c * d[0] + s * d[1];
        let v = -s * d[0] + c * d[1];
        let (a, b, c) = (u / self.radii[0], v / self.radii[1], d[2] / self.radii[2]);
        let q = a * a + b * b + c * c;
        q <= 1.0
    }
}

/// Sum of ellipsoid intensities at every voxel center, clamped to `[0, 1]`.
pub fn render(dims: [usize; 3], shapes: &[Ellipsoid]) -> Result<Volume> {
    let coord = |i: usize, n: usize| (2.0 * i as f64 + 1.0) / n as f64 - 1.0;
    Volume::from_fn(dims, |x, y, z| {
        let p = [coord(x, dims[0]), coord(y, dims[1]), coord(z, dims[2])];
        shapes
            .iter()
            .filter(|e| e.contains(p))
            .map(|e| e.intensity)
            .sum::<f64>()
            .clamp(0.0, 1.0)
    })
}

/// Head-like phantom: a bright shell, a darker interior, and a handful of
/// smaller inclusions, all drawn from `seed`.
pub fn random_phantom(dims: [usize; 3], seed: u64) -> Result<Volume> {
    let mut rng = substream(seed, StreamKey::new(Purpose::Phantom, 0, None, 0));
    let mut shapes = Vec::new();
    let outer = [
        rng.random_range(0.72..0.88),
        rng.random_range(0.78..0.92),
        rng.random_range(0.70..0.88),
    ];
    let jitter = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];
    let tilt = rng.random_range(-0.3..0.3);
    shapes.push(Ellipsoid {
        center: jitter,
        radii: outer,
        angle: tilt,
        intensity: rng.random_range(0.75..0.95),
    });
    let shell = rng.random_range(0.84..0.9);
    shapes.push(Ellipsoid {
        center: jitter,
        radii: [outer[0] * shell, outer[1] * shell, outer[2] * shell],
        angle: tilt,
        intensity: -rng.random_range(0.35..0.5),
    });
    let n_inner = rng.random_range(4..8);
    for _ in 0..n_inner {
        let r = [rng.random_range(0.08..0.3), rng.random_range(0.08..0.3), rng.random_range(0.08..0.35)];
        let c = [
            rng.random_range(-0.45..0.45) + jitter[0],
            rng.random_range(-0.5..0.5) + jitter[1],
            rng.random_range(-0.45..0.45) + jitter[2],
        ];
        let sign = if rng.random::<f64>() < 0.6 { 1.0 } else { -1.0 };
        shapes.push(Ellipsoid {
            center: c,
            radii: r,
            angle: rng.random_range(0.0..core::f64::consts::PI),
            intensity: sign * rng.random_range(0.1..0.35),
        });
    }
    render(dims, &shapes)
}
