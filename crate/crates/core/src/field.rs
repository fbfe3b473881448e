//! Dense 2D fields and the convolution kernels shared by the wavelet
//! convolution and the denoiser.
//!
//! Every field stores its first index fastest: element `(i, j)` of a field
//! with dims `[n0, n1]` lives at `i + n0 * j`. Multi-channel maps stack
//! channels outermost.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};

/// Single-channel 2D scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    dims: [usize; 2],
    data: Vec<f64>,
}

impl Image {
    pub fn new(dims: [usize; 2], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] {
            return Err(dim_err!(
                "image data length {} does not match dims {}x{}",
                data.len(),
                dims[0],
                dims[1]
            ));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 2]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1]],
        }
    }

    pub fn from_fn(dims: [usize; 2], mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1]);
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                data.push(f(i, j));
            }
        }
        Self { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i + self.dims[0] * j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i + self.dims[0] * j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Multi-channel 2D field, shape `(channels, n0, n1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    dims: [usize; 2],
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, dims: [usize; 2], data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * dims[0] * dims[1] {
            return Err(dim_err!(
                "feature map data length {} does not match shape ({}, {}, {})",
                data.len(),
                channels,
                dims[0],
                dims[1]
            ));
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    pub fn zeros(channels: usize, dims: [usize; 2]) -> Self {
        Self {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1]],
        }
    }

    /// Stacks single-channel images of identical dims.
    pub fn from_images(images: &[Image]) -> Result<Self> {
        let dims = images
            .first()
            .map(Image::dims)
            .ok_or_else(|| Error::Dimension("cannot stack zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * dims[0] * dims[1]);
        for img in images {
            if img.dims() != dims {
                return Err(dim_err!(
                    "cannot stack image {:?} with {:?}",
                    img.dims(),
                    dims
                ));
            }
            data.extend_from_slice(img.data());
        }
        Ok(Self {
            channels: images.len(),
            dims,
            data,
        })
    }

    /// Concatenates maps along the channel axis.
    pub fn concat(maps: &[&FeatureMap]) -> Result<Self> {
        let dims = maps
            .first()
            .map(|m| m.dims)
            .ok_or_else(|| Error::Dimension("cannot concatenate zero maps".into()))?;
        let mut channels = 0;
        let mut data = Vec::new();
        for m in maps {
            if m.dims != dims {
                return Err(dim_err!("cannot concatenate {:?} with {:?}", m.dims, dims));
            }
            channels += m.channels;
            data.extend_from_slice(&m.data);
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> [usize; 2] {
        self.dims
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.dims[0], self.dims[1])
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn channel_image(&self, c: usize) -> Image {
        Image {
            dims: self.dims,
            data: self.channel(c).to_vec(),
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Row range `lo..hi` of output positions whose input `p + d` stays inside `0..n`.
#[inline]
fn valid_range(n: usize, d: isize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo.min(n), hi)
}

/// `out += w * shift(inp, dx, dy)` over one channel plane with zero padding.
#[inline]
fn shifted_axpy(out: &mut [f64], inp: &[f64], dims: [usize; 2], dx: isize, dy: isize, w: f64) {
    let (n0, n1) = (dims[0], dims[1]);
    let (xlo, xhi) = valid_range(n0, dx);
    let (ylo, yhi) = valid_range(n1, dy);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let src_row = ((y as isize + dy) as usize) * n0;
        let src = &inp[(src_row as isize + xlo as isize + dx) as usize..][..xhi - xlo];
        let dst = &mut out[y * n0 + xlo..y * n0 + xhi];
        for (d, s) in dst.iter_mut().zip(src) {
            *d += w * s;
        }
    }
}

/// Correlation of `gout` with `shift(inp, dx, dy)`: the weight gradient of one tap.
#[inline]
fn shifted_dot(gout: &[f64], inp: &[f64], dims: [usize; 2], dx: isize, dy: isize) -> f64 {
    let (n0, n1) = (dims[0], dims[1]);
    let (xlo, xhi) = valid_range(n0, dx);
    let (ylo, yhi) = valid_range(n1, dy);
    if xlo >= xhi {
        return 0.0;
    }
    let mut acc = 0.0;
    for y in ylo..yhi {
        let src_row = ((y as isize + dy) as usize) * n0;
        let src = &inp[(src_row as isize + xlo as isize + dx) as usize..][..xhi - xlo];
        let g = &gout[y * n0 + xlo..y * n0 + xhi];
        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
    }
    acc
}

/// `gin += w * shift^T(gout)`, the adjoint of [`shifted_axpy`].
#[inline]
fn shifted_axpy_adjoint(gin: &mut [f64], gout: &[f64], dims: [usize; 2], dx: isize, dy: isize, w: f64) {
    let (n0, n1) = (dims[0], dims[1]);
    let (xlo, xhi) = valid_range(n0, dx);
    let (ylo, yhi) = valid_range(n1, dy);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let dst_row = ((y as isize + dy) as usize) * n0;
        let dst = &mut gin[(dst_row as isize + xlo as isize + dx) as usize..][..xhi - xlo];
        let g = &gout[y * n0 + xlo..y * n0 + xhi];
        for (d, s) in dst.iter_mut().zip(g) {
            *d += w * s;
        }
    }
}

/// Shape of a dense convolution with square odd kernel and zero "same" padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    #[inline]
    fn tap(&self, o: usize, c: usize, ky: usize, kx: usize) -> usize {
        ((o * self.cin + c) * self.k + ky) * self.k + kx
    }
}

/// Dense 2D convolution. Weights are laid out `[cout][cin][ky][kx]`.
pub fn conv2d(
    input: &[f64],
    dims: [usize; 2],
    shape: ConvShape,
    weights: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let n = dims[0] * dims[1];
    debug_assert_eq!(input.len(), shape.cin * n);
    debug_assert_eq!(weights.len(), shape.weight_len());
    let pad = (shape.k / 2) as isize;
    let mut out = vec![0.0; shape.cout * n];
    for o in 0..shape.cout {
        let dst = &mut out[o * n..(o + 1) * n];
        if let Some(b) = bias {
            dst.iter_mut().for_each(|v| *v = b[o]);
        }
        for c in 0..shape.cin {
            let src = &input[c * n..(c + 1) * n];
            for ky in 0..shape.k {
                for kx in 0..shape.k {
                    let w = weights[shape.tap(o, c, ky, kx)];
                    if w != 0.0 {
                        shifted_axpy(dst, src, dims, kx as isize - pad, ky as isize - pad, w);
                    }
                }
            }
        }
    }
    out
}

/// Backward pass of [`conv2d`]. Accumulates into `grad_w` and `grad_b`;
/// returns the input gradient when `want_input` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    input: &[f64],
    dims: [usize; 2],
    shape: ConvShape,
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: Option<&mut [f64]>,
    want_input: bool,
) -> Option<Vec<f64>> {
    let n = dims[0] * dims[1];
    let pad = (shape.k / 2) as isize;
    if let Some(gb) = grad_b {
        for o in 0..shape.cout {
            gb[o] += grad_out[o * n..(o + 1) * n].iter().sum::<f64>();
        }
    }
    let mut grad_in = want_input.then(|| vec![0.0; shape.cin * n]);
    for o in 0..shape.cout {
        let g = &grad_out[o * n..(o + 1) * n];
        for c in 0..shape.cin {
            let src = &input[c * n..(c + 1) * n];
            for ky in 0..shape.k {
                for kx in 0..shape.k {
                    let (dx, dy) = (kx as isize - pad, ky as isize - pad);
                    let tap = shape.tap(o, c, ky, kx);
                    grad_w[tap] += shifted_dot(g, src, dims, dx, dy);
                    if let Some(gi) = grad_in.as_mut() {
                        let w = weights[tap];
                        if w != 0.0 {
                            shifted_axpy_adjoint(&mut gi[c * n..(c + 1) * n], g, dims, dx, dy, w);
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Depth-wise convolution: channel `c` is filtered by its own `k x k` kernel.
pub fn depthwise_conv2d(
    input: &[f64],
    channels: usize,
    dims: [usize; 2],
    k: usize,
    weights: &[f64],
) -> Vec<f64> {
    let n = dims[0] * dims[1];
    debug_assert_eq!(weights.len(), channels * k * k);
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        let dst = &mut out[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let w = weights[(c * k + ky) * k + kx];
                if w != 0.0 {
                    shifted_axpy(dst, src, dims, kx as isize - pad, ky as isize - pad, w);
                }
            }
        }
    }
    out
}

/// Backward pass of [`depthwise_conv2d`]; accumulates into `grad_w` and returns the input gradient.
pub fn depthwise_conv2d_backward(
    input: &[f64],
    channels: usize,
    dims: [usize; 2],
    k: usize,
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
) -> Vec<f64> {
    let n = dims[0] * dims[1];
    let pad = (k / 2) as isize;
    let mut grad_in = vec![0.0; channels * n];
    for c in 0..channels {
        let src = &input[c * n..(c + 1) * n];
        let g = &grad_out[c * n..(c + 1) * n];
        let gi = &mut grad_in[c * n..(c + 1) * n];
        for ky in 0..k {
            for kx in 0..k {
                let (dx, dy) = (kx as isize - pad, ky as isize - pad);
                let tap = (c * k + ky) * k + kx;
                grad_w[tap] += shifted_dot(g, src, dims, dx, dy);
                let w = weights[tap];
                if w != 0.0 {
                    shifted_axpy_adjoint(gi, g, dims, dx, dy, w);
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &[f64], dims: [usize; 2], s: ConvShape, w: &[f64]) -> Vec<f64> {
        let (n0, n1) = (dims[0] as isize, dims[1] as isize);
        let pad = (s.k / 2) as isize;
        let mut out = vec![0.0; s.cout * dims[0] * dims[1]];
        for o in 0..s.cout {
            for y in 0..n1 {
                for x in 0..n0 {
                    let mut acc = 0.0;
                    for c in 0..s.cin {
                        for ky in 0..s.k {
                            for kx in 0..s.k {
                                let (sx, sy) = (x + kx as isize - pad, y + ky as isize - pad);
                                if sx >= 0 && sx < n0 && sy >= 0 && sy < n1 {
                                    acc += w[s.tap(o, c, ky, kx)]
                                        * input[c * (n0 * n1) as usize + (sy * n0 + sx) as usize];
                                }
                            }
                        }
                    }
                    out[o * (n0 * n1) as usize + (y * n0 + x) as usize] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let dims = [5, 4];
        let s = ConvShape { cin: 2, cout: 3, k: 3 };
        let x = pseudo(2 * 20, 1);
        let w = pseudo(s.weight_len(), 2);
        let got = conv2d(&x, dims, s, &w, None);
        let want = naive_conv(&x, dims, s, &w);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), g> = <x, conv^T(g)>
        let dims = [6, 6];
        let s = ConvShape { cin: 2, cout: 2, k: 3 };
        let x = pseudo(72, 3);
        let w = pseudo(s.weight_len(), 4);
        let g = pseudo(72, 5);
        let y = conv2d(&x, dims, s, &w, None);
        let mut gw = vec![0.0; s.weight_len()];
        let gi = conv2d_backward(&x, dims, s, &w, &g, &mut gw, None, true).unwrap();
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // the conv is also linear in w, so <gw, w> = <y, g>
        let rhs_w: f64 = gw.iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_w).abs() < 1e-12);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let dims = [4, 4];
        let x = pseudo(32, 9);
        let mut w = vec![0.0; 2 * 9];
        w[4] = 1.0;
        w[9 + 4] = 1.0;
        assert_eq!(depthwise_conv2d(&x, 2, dims, 3, &w), x);
    }

    #[test]
    fn feature_map_rejects_bad_length() {
        assert!(FeatureMap::new(2, [2, 2], vec![0.0; 7]).is_err());
        assert!(Image::new([2, 3], vec![0.0; 5]).is_err());
    }
}
