//! One-level orthonormal 2D Haar transform and the wavelet convolution.
//!
//! For each 2x2 block with `a, b` on the top row and `c, d` below:
//!
//! ```text
//! LL = (a + b + c + d) / 2     HL = (a - b + c - d) / 2
//! LH = (a + b - c - d) / 2     HH = (a - b - c + d) / 2
//! ```
//!
//! The transform is orthonormal, so its adjoint is its inverse and white
//! noise keeps its variance in every subband.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{dim_err, Error, Result};
use crate::field::{depthwise_conv2d, depthwise_conv2d_backward, FeatureMap, Image};

/// The four subbands of a one-level transform, in stacking order.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandImage {
    pub ll: Image,
    pub lh: Image,
    pub hl: Image,
    pub hh: Image,
    source_shape: [usize; 2],
}

impl SubbandImage {
    pub fn new(ll: Image, lh: Image, hl: Image, hh: Image) -> Result<Self> {
        let d = ll.dims();
        if lh.dims() != d || hl.dims() != d || hh.dims() != d {
            return Err(dim_err!(
                "subband shapes differ: LL {:?}, LH {:?}, HL {:?}, HH {:?}",
                d,
                lh.dims(),
                hl.dims(),
                hh.dims()
            ));
        }
        Ok(Self {
            ll,
            lh,
            hl,
            hh,
            source_shape: [2 * d[0], 2 * d[1]],
        })
    }

    pub fn source_shape(&self) -> [usize; 2] {
        self.source_shape
    }

    pub fn subband_dims(&self) -> [usize; 2] {
        self.ll.dims()
    }

    pub fn sum_sq(&self) -> f64 {
        self.ll.sum_sq() + self.lh.sum_sq() + self.hl.sum_sq() + self.hh.sum_sq()
    }

    /// Channel stack of shape `(4, H/2, W/2)` in the order LL, LH, HL, HH.
    pub fn stack(&self) -> FeatureMap {
        FeatureMap::from_images(&[
            self.ll.clone(),
            self.lh.clone(),
            self.hl.clone(),
            self.hh.clone(),
        ])
        .expect("subbands share one shape")
    }

    pub fn unstack(map: &FeatureMap) -> Result<Self> {
        if map.channels() != 4 {
            return Err(dim_err!(
                "expected 4 subband channels, found {}",
                map.channels()
            ));
        }
        Self::new(
            map.channel_image(0),
            map.channel_image(1),
            map.channel_image(2),
            map.channel_image(3),
        )
    }
}

fn check_even(dims: [usize; 2]) -> Result<()> {
    if dims[0] % 2 != 0 || dims[1] % 2 != 0 || dims[0] == 0 || dims[1] == 0 {
        return Err(dim_err!(
            "Haar transform needs even non-zero dims, found {}x{}",
            dims[0],
            dims[1]
        ));
    }
    Ok(())
}

/// Analysis of one channel plane into four quarter-size planes.
fn analyze(src: &[f64], dims: [usize; 2], ll: &mut [f64], lh: &mut [f64], hl: &mut [f64], hh: &mut [f64]) {
    let (n0, h0, h1) = (dims[0], dims[0] / 2, dims[1] / 2);
    for j in 0..h1 {
        let top = &src[2 * j * n0..(2 * j + 1) * n0];
        let bot = &src[(2 * j + 1) * n0..(2 * j + 2) * n0];
        for i in 0..h0 {
            let (a, b, c, d) = (top[2 * i], top[2 * i + 1], bot[2 * i], bot[2 * i + 1]);
            let k = i + h0 * j;
            ll[k] = 0.5 * (a + b + c + d);
            lh[k] = 0.5 * (a + b - c - d);
            hl[k] = 0.5 * (a - b + c - d);
            hh[k] = 0.5 * (a - b - c + d);
        }
    }
}

/// Synthesis of one channel plane from four quarter-size planes.
fn synthesize(ll: &[f64], lh: &[f64], hl: &[f64], hh: &[f64], half: [usize; 2], dst: &mut [f64]) {
    let (h0, h1) = (half[0], half[1]);
    let n0 = 2 * h0;
    for j in 0..h1 {
        for i in 0..h0 {
            let k = i + h0 * j;
            let (s, t, u, v) = (ll[k], lh[k], hl[k], hh[k]);
            dst[2 * j * n0 + 2 * i] = 0.5 * (s + t + u + v);
            dst[2 * j * n0 + 2 * i + 1] = 0.5 * (s + t - u - v);
            dst[(2 * j + 1) * n0 + 2 * i] = 0.5 * (s - t + u - v);
            dst[(2 * j + 1) * n0 + 2 * i + 1] = 0.5 * (s - t - u + v);
        }
    }
}

pub fn dwt2(img: &Image) -> Result<SubbandImage> {
    let dims = img.dims();
    check_even(dims)?;
    let half = [dims[0] / 2, dims[1] / 2];
    let mut bands = [
        Image::zeros(half),
        Image::zeros(half),
        Image::zeros(half),
        Image::zeros(half),
    ];
    let [ll, lh, hl, hh] = &mut bands;
    analyze(
        img.data(),
        dims,
        ll.data_mut(),
        lh.data_mut(),
        hl.data_mut(),
        hh.data_mut(),
    );
    let [ll, lh, hl, hh] = bands;
    SubbandImage::new(ll, lh, hl, hh)
}

pub fn idwt2(sub: &SubbandImage) -> Result<Image> {
    let half = sub.subband_dims();
    let mut out = Image::zeros(sub.source_shape());
    synthesize(
        sub.ll.data(),
        sub.lh.data(),
        sub.hl.data(),
        sub.hh.data(),
        half,
        out.data_mut(),
    );
    Ok(out)
}

/// Transforms every channel of a `C`-channel map into a `4C`-channel map at
/// half resolution. Output channel `s * C + c` holds subband `s` of input
/// channel `c`, with `s` ordered LL, LH, HL, HH.
pub fn dwt_channels(x: &FeatureMap) -> Result<FeatureMap> {
    let dims = x.dims();
    check_even(dims)?;
    let c = x.channels();
    let half = [dims[0] / 2, dims[1] / 2];
    let n = half[0] * half[1];
    let mut out = vec![0.0; 4 * c * n];
    let (ll, rest) = out.split_at_mut(c * n);
    let (lh, rest) = rest.split_at_mut(c * n);
    let (hl, hh) = rest.split_at_mut(c * n);
    for ch in 0..c {
        let r = ch * n..(ch + 1) * n;
        analyze(
            x.channel(ch),
            dims,
            &mut ll[r.clone()],
            &mut lh[r.clone()],
            &mut hl[r.clone()],
            &mut hh[r],
        );
    }
    FeatureMap::new(4 * c, half, out)
}

/// Inverse of [`dwt_channels`].
pub fn idwt_channels(s: &FeatureMap) -> Result<FeatureMap> {
    if s.channels() % 4 != 0 || s.channels() == 0 {
        return Err(dim_err!(
            "subband stack needs a positive multiple of 4 channels, found {}",
            s.channels()
        ));
    }
    let c = s.channels() / 4;
    let half = s.dims();
    let dims = [2 * half[0], 2 * half[1]];
    let mut out = FeatureMap::zeros(c, dims);
    for ch in 0..c {
        synthesize(
            s.channel(ch),
            s.channel(c + ch),
            s.channel(2 * c + ch),
            s.channel(3 * c + ch),
            half,
            out.channel_mut(ch),
        );
    }
    Ok(out)
}

/// Receptive field of an `levels`-deep wavelet convolution with `k x k` kernels.
pub fn receptive_field(levels: u32, k: usize) -> usize {
    (1usize << levels) * k
}

/// Stored weights of a wavelet convolution: one depth-wise `k x k` kernel
/// per subband channel per level.
pub fn param_count(levels: u32, channels: usize, k: usize) -> usize {
    levels as usize * 4 * channels * k * k
}

/// Geometry of a wavelet convolution over `channels` input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WtConvShape {
    pub channels: usize,
    pub levels: u32,
    pub k: usize,
}

impl WtConvShape {
    pub fn weight_len(&self) -> usize {
        param_count(self.levels, self.channels, self.k)
    }

    fn level_weights<'a>(&self, w: &'a [f64], level: usize) -> &'a [f64] {
        let n = 4 * self.channels * self.k * self.k;
        &w[level * n..(level + 1) * n]
    }

    fn check(&self, x: &FeatureMap, weights: &[f64]) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::Weight(alloc::format!(
                "kernel size {} must be odd",
                self.k
            )));
        }
        if weights.len() != self.weight_len() {
            return Err(Error::Weight(alloc::format!(
                "expected {} wavelet-convolution weights for {} channels, {} levels, k = {}; found {}",
                self.weight_len(),
                self.channels,
                self.levels,
                self.k,
                weights.len()
            )));
        }
        if x.channels() != self.channels {
            return Err(Error::Weight(alloc::format!(
                "kernel covers {} channels but input has {}",
                self.channels,
                x.channels()
            )));
        }
        let m = 1usize << self.levels;
        let d = x.dims();
        if d[0] % m != 0 || d[1] % m != 0 {
            return Err(dim_err!(
                "dims {}x{} not divisible by 2^{} for wavelet convolution",
                d[0],
                d[1],
                self.levels
            ));
        }
        Ok(())
    }
}

/// Intermediate subband stacks of a wavelet convolution, kept for backprop.
#[derive(Debug, Clone)]
pub struct WtConvTape {
    /// Subband stack entering the depth-wise convolution at each level.
    subbands: Vec<FeatureMap>,
}

/// Forward wavelet convolution that also returns its tape.
///
/// Level `i` transforms the unfiltered low band of level `i - 1`, filters
/// all four subbands depth-wise, and the filtered stacks are folded back
/// from the coarsest level, each coarser result entering the LL band of
/// the level above before inversion.
pub fn wtconv_forward(x: &FeatureMap, weights: &[f64], shape: WtConvShape) -> Result<(FeatureMap, WtConvTape)> {
    shape.check(x, weights)?;
    let c = shape.channels;
    let levels = shape.levels as usize;
    let mut subbands = Vec::with_capacity(levels);
    let mut filtered = Vec::with_capacity(levels);
    let mut low = x.clone();
    for level in 0..levels {
        let s = dwt_channels(&low)?;
        let y = depthwise_conv2d(s.data(), 4 * c, s.dims(), shape.k, shape.level_weights(weights, level));
        let y = FeatureMap::new(4 * c, s.dims(), y)?;
        let n = s.plane_len();
        low = FeatureMap::new(c, s.dims(), s.data()[..c * n].to_vec())?;
        subbands.push(s);
        filtered.push(y);
    }
    let mut carry: Option<FeatureMap> = None;
    for mut y in filtered.into_iter().rev() {
        if let Some(z) = carry.take() {
            let n = y.plane_len();
            for (a, b) in y.data_mut()[..c * n].iter_mut().zip(z.data()) {
                *a += b;
            }
        }
        carry = Some(idwt_channels(&y)?);
    }
    Ok((carry.expect("at least one level"), WtConvTape { subbands }))
}

/// Wavelet convolution `IDWT(Conv(w, DWT(x)))`, applied recursively over `levels`.
pub fn wtconv(x: &FeatureMap, weights: &[f64], levels: u32, k: usize) -> Result<FeatureMap> {
    if levels == 0 {
        return Err(Error::Parameter("wavelet convolution needs at least one level".into()));
    }
    let shape = WtConvShape {
        channels: x.channels(),
        levels,
        k,
    };
    wtconv_forward(x, weights, shape).map(|(y, _)| y)
}

/// Backward pass: accumulates weight gradients into `grad_w` and returns the input gradient.
pub fn wtconv_backward(
    tape: &WtConvTape,
    weights: &[f64],
    shape: WtConvShape,
    grad_out: &FeatureMap,
    grad_w: &mut [f64],
) -> Result<FeatureMap> {
    let c = shape.channels;
    let levels = shape.levels as usize;
    let wlen = 4 * c * shape.k * shape.k;
    // gradient w.r.t. each level's filtered stack
    let mut grad_filtered = Vec::with_capacity(levels);
    let mut gz = grad_out.clone();
    for _ in 0..levels {
        let gy = dwt_channels(&gz)?;
        let n = gy.plane_len();
        gz = FeatureMap::new(c, gy.dims(), gy.data()[..c * n].to_vec())?;
        grad_filtered.push(gy);
    }
    let mut grad_low: Option<FeatureMap> = None;
    for level in (0..levels).rev() {
        let s = &tape.subbands[level];
        let gy = &grad_filtered[level];
        let mut gs = depthwise_conv2d_backward(
            s.data(),
            4 * c,
            s.dims(),
            shape.k,
            shape.level_weights(weights, level),
            gy.data(),
            &mut grad_w[level * wlen..(level + 1) * wlen],
        );
        if let Some(gl) = grad_low.take() {
            for (a, b) in gs[..gl.data().len()].iter_mut().zip(gl.data()) {
                *a += b;
            }
        }
        let gs = FeatureMap::new(4 * c, s.dims(), gs)?;
        grad_low = Some(idwt_channels(&gs)?);
    }
    Ok(grad_low.expect("at least one level"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(dims: [usize; 2], vals: &[f64]) -> Image {
        Image::new(dims, vals.to_vec()).unwrap()
    }

    fn lcg(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_block() {
        let s = dwt2(&img([2, 2], &[1.0; 4])).unwrap();
        assert_eq!(s.ll.data(), &[2.0]);
        assert_eq!(s.lh.data(), &[0.0]);
        assert_eq!(s.hl.data(), &[0.0]);
        assert_eq!(s.hh.data(), &[0.0]);
    }

    #[test]
    fn block_matches_kronecker_haar_matrix() {
        // H (x) H with H = [[1, 1], [1, -1]] / sqrt(2), acting on (a, b, c, d)
        // where (a, b) is the top row: the vertical factor is the outer one.
        let h = [[1.0, 1.0], [1.0, -1.0]];
        let r = 1.0 / 2f64.sqrt();
        let v = [1.0, 2.0, 3.0, 4.0];
        let mut coef = [0.0; 4];
        for (row, out) in coef.iter_mut().enumerate() {
            let (vy, vx) = (row / 2, row % 2);
            for (col, val) in v.iter().enumerate() {
                let (py, px) = (col / 2, col % 2);
                *out += r * h[vy][py] * r * h[vx][px] * val;
            }
        }
        // rows: (low-y, low-x) = LL, (low-y, high-x) = HL, (high-y, low-x) = LH, (high-y, high-x) = HH
        let s = dwt2(&img([2, 2], &v)).unwrap();
        assert!((s.ll.data()[0] - coef[0]).abs() < 1e-14);
        assert!((s.hl.data()[0] - coef[1]).abs() < 1e-14);
        assert!((s.lh.data()[0] - coef[2]).abs() < 1e-14);
        assert!((s.hh.data()[0] - coef[3]).abs() < 1e-14);
        assert_eq!(s.ll.data()[0], 5.0);
    }

    #[test]
    fn energy_preserved() {
        let x = img([8, 8], &lcg(64, 7));
        let s = dwt2(&x).unwrap();
        assert!((s.sum_sq() - x.sum_sq()).abs() < 1e-10);
    }

    #[test]
    fn inverse_of_constant_block() {
        let s = SubbandImage::new(
            img([1, 1], &[2.0]),
            img([1, 1], &[0.0]),
            img([1, 1], &[0.0]),
            img([1, 1], &[0.0]),
        )
        .unwrap();
        assert_eq!(idwt2(&s).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn perfect_reconstruction_64() {
        let x = img([64, 64], &lcg(64 * 64, 11));
        let y = idwt2(&dwt2(&x).unwrap()).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(matches!(dwt2(&Image::zeros([3, 4])), Err(Error::Dimension(_))));
        let bad = SubbandImage::new(Image::zeros([2, 2]), Image::zeros([2, 2]), Image::zeros([1, 2]), Image::zeros([2, 2]));
        assert!(bad.is_err());
    }

    #[test]
    fn stack_order_and_shape() {
        let x = img([16, 16], &lcg(256, 3));
        let s = dwt2(&x).unwrap();
        let st = s.stack();
        assert_eq!(st.shape(), (4, 8, 8));
        assert_eq!(st.channel(0), s.ll.data());
        assert_eq!(SubbandImage::unstack(&st).unwrap(), s);
        assert!(SubbandImage::unstack(&FeatureMap::zeros(3, [8, 8])).is_err());
    }

    #[test]
    fn channel_transform_matches_single_image() {
        let a = img([4, 6], &lcg(24, 1));
        let b = img([4, 6], &lcg(24, 2));
        let m = FeatureMap::from_images(&[a.clone(), b.clone()]).unwrap();
        let t = dwt_channels(&m).unwrap();
        let (sa, sb) = (dwt2(&a).unwrap(), dwt2(&b).unwrap());
        assert_eq!(t.channel(0), sa.ll.data());
        assert_eq!(t.channel(1), sb.ll.data());
        assert_eq!(t.channel(2), sa.lh.data());
        assert_eq!(t.channel(7), sb.hh.data());
        let back = idwt_channels(&t).unwrap();
        assert!(back.data().iter().zip(m.data()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn identity_kernels_level_one() {
        let x = FeatureMap::new(2, [8, 8], lcg(128, 5)).unwrap();
        let mut w = vec![0.0; param_count(1, 2, 3)];
        for ch in 0..8 {
            w[ch * 9 + 4] = 1.0;
        }
        let y = wtconv(&x, &w, 1, 3).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn growth_rules() {
        assert_eq!(receptive_field(2, 3), 12);
        assert_eq!(param_count(2, 8, 3), 576);
    }

    #[test]
    fn wtconv_errors() {
        let x = FeatureMap::zeros(2, [6, 6]);
        let w = vec![0.0; param_count(2, 2, 3)];
        assert!(matches!(wtconv(&x, &w, 2, 3), Err(Error::Dimension(_))));
        let x = FeatureMap::zeros(2, [8, 8]);
        assert!(matches!(wtconv(&x, &w[1..], 2, 3), Err(Error::Weight(_))));
        let w3 = vec![0.0; param_count(2, 3, 3)];
        assert!(matches!(wtconv(&x, &w3, 2, 3), Err(Error::Weight(_))));
    }

    #[test]
    fn wtconv_backward_is_adjoint() {
        let shape = WtConvShape { channels: 2, levels: 2, k: 3 };
        let x = FeatureMap::new(2, [8, 8], lcg(128, 21)).unwrap();
        let w = lcg(shape.weight_len(), 22);
        let g = FeatureMap::new(2, [8, 8], lcg(128, 23)).unwrap();
        let (y, tape) = wtconv_forward(&x, &w, shape).unwrap();
        let mut gw = vec![0.0; w.len()];
        let gx = wtconv_backward(&tape, &w, shape, &g, &mut gw).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(y.data(), g.data());
        assert!((lhs - dot(x.data(), gx.data())).abs() < 1e-10);
        assert!((lhs - dot(&w, &gw)).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn adjoint_equals_inverse(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
            let dims = [2 * h, 2 * w];
            let n = dims[0] * dims[1];
            let x = img(dims, &lcg(n, seed));
            let s = FeatureMap::new(4, [h, w], lcg(n, seed ^ 0x55)).unwrap();
            let lhs: f64 = dwt2(&x).unwrap().stack().data().iter().zip(s.data()).map(|(a, b)| a * b).sum();
            let back = idwt2(&SubbandImage::unstack(&s).unwrap()).unwrap();
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn wtconv_linear_and_shape_preserving(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let shape = [8, 16];
            let w = lcg(param_count(2, 2, 3), seed);
            let x1 = FeatureMap::new(2, shape, lcg(256, seed ^ 1)).unwrap();
            let x2 = FeatureMap::new(2, shape, lcg(256, seed ^ 2)).unwrap();
            let mix: Vec<f64> = x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect();
            let y = wtconv(&FeatureMap::new(2, shape, mix).unwrap(), &w, 2, 3).unwrap();
            let y1 = wtconv(&x1, &w, 2, 3).unwrap();
            let y2 = wtconv(&x2, &w, 2, 3).unwrap();
            prop_assert_eq!(y.shape(), x1.shape());
            for i in 0..y.data().len() {
                prop_assert!((y.data()[i] - (a * y1.data()[i] + b * y2.data()[i])).abs() < 1e-10);
            }
        }

        #[test]
        fn idwt_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let s1 = FeatureMap::new(4, [3, 2], lcg(24, seed)).unwrap();
            let s2 = FeatureMap::new(4, [3, 2], lcg(24, !seed)).unwrap();
            let mix: Vec<f64> = s1.data().iter().zip(s2.data()).map(|(p, q)| a * p + b * q).collect();
            let lhs = idwt_channels(&FeatureMap::new(4, [3, 2], mix).unwrap()).unwrap();
            let r1 = idwt_channels(&s1).unwrap();
            let r2 = idwt_channels(&s2).unwrap();
            for i in 0..lhs.data().len() {
                prop_assert!((lhs.data()[i] - (a * r1.data()[i] + b * r2.data()[i])).abs() < 1e-12);
            }
        }
    }
}
