//! Forward and reverse-mode passes of the denoiser.

use alloc::vec;
use alloc::vec::Vec;

use super::{BlockParams, ConvParams, DenoiserNet};
use crate::error::Result;
use crate::field::{conv2d, conv2d_backward, FeatureMap};
use crate::wavelet::{wtconv_backward, wtconv_forward, WtConvTape};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

fn silu_backward(pre: &[f64], grad: &mut [f64]) {
    for (g, &x) in grad.iter_mut().zip(pre) {
        let s = sigmoid(x);
        *g *= s * (1.0 + x * (1.0 - s));
    }
}

fn conv(params: &[f64], cp: &ConvParams, x: &[f64], dims: [usize; 2]) -> Vec<f64> {
    conv2d(x, dims, cp.shape, &params[cp.w.clone()], Some(&params[cp.b.clone()]))
}

fn conv_back(
    params: &[f64],
    grads: &mut [f64],
    cp: &ConvParams,
    x: &[f64],
    dims: [usize; 2],
    g: &[f64],
    want_input: bool,
) -> Option<Vec<f64>> {
    let (gw, gb) = split_two(grads, cp);
    conv2d_backward(x, dims, cp.shape, &params[cp.w.clone()], g, gw, Some(gb), want_input)
}

/// Disjoint mutable views of a conv's weight and bias gradients.
fn split_two<'a>(grads: &'a mut [f64], cp: &ConvParams) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert_eq!(cp.w.end, cp.b.start);
    let (w, b) = grads[cp.w.start..cp.b.end].split_at_mut(cp.w.len());
    (w, b)
}

fn avg_pool(x: &[f64], channels: usize, dims: [usize; 2]) -> Vec<f64> {
    let (n0, h0, h1) = (dims[0], dims[0] / 2, dims[1] / 2);
    let n = dims[0] * dims[1];
    let mut out = vec![0.0; channels * h0 * h1];
    for c in 0..channels {
        let src = &x[c * n..(c + 1) * n];
        let dst = &mut out[c * h0 * h1..(c + 1) * h0 * h1];
        for j in 0..h1 {
            for i in 0..h0 {
                let a = src[2 * i + n0 * 2 * j] + src[2 * i + 1 + n0 * 2 * j];
                let b = src[2 * i + n0 * (2 * j + 1)] + src[2 * i + 1 + n0 * (2 * j + 1)];
                dst[i + h0 * j] = 0.25 * (a + b);
            }
        }
    }
    out
}

/// Nearest upsampling from `half` dims; also the adjoint of pooling up to a factor 4.
fn upsample(x: &[f64], channels: usize, half: [usize; 2], scale: f64) -> Vec<f64> {
    let (h0, h1) = (half[0], half[1]);
    let n0 = 2 * h0;
    let n = 4 * h0 * h1;
    let mut out = vec![0.0; channels * n];
    for c in 0..channels {
        let src = &x[c * h0 * h1..(c + 1) * h0 * h1];
        let dst = &mut out[c * n..(c + 1) * n];
        for j in 0..h1 {
            for i in 0..h0 {
                let v = scale * src[i + h0 * j];
                dst[2 * i + n0 * 2 * j] = v;
                dst[2 * i + 1 + n0 * 2 * j] = v;
                dst[2 * i + n0 * (2 * j + 1)] = v;
                dst[2 * i + 1 + n0 * (2 * j + 1)] = v;
            }
        }
    }
    out
}

/// Adjoint of [`upsample`] with unit scale: sums each 2x2 block.
fn sum_pool(x: &[f64], channels: usize, dims: [usize; 2]) -> Vec<f64> {
    let mut out = avg_pool(x, channels, dims);
    out.iter_mut().for_each(|v| *v *= 4.0);
    out
}

pub(super) struct BlockTape {
    dims: [usize; 2],
    x: Vec<f64>,
    h1: Vec<f64>,
    wt: WtConvTape,
    h2: Vec<f64>,
    a2: Vec<f64>,
}

pub(super) struct Tape {
    input: Vec<f64>,
    dims: [usize; 2],
    stem_out: Vec<f64>,
    enc: Vec<BlockTape>,
    dec: Vec<BlockTape>,
    head_in: Vec<f64>,
}

fn block_forward(
    params: &[f64],
    bp: &BlockParams,
    x: Vec<f64>,
    dims: [usize; 2],
    record: bool,
) -> Result<(Vec<f64>, Option<BlockTape>)> {
    let c = bp.conv1.shape.cout;
    let h1 = conv(params, &bp.conv1, &x, dims);
    let a1 = FeatureMap::new(c, dims, silu(&h1))?;
    let (h2, wt) = wtconv_forward(&a1, &params[bp.wt.clone()], bp.wt_shape)?;
    let h2 = h2.into_data();
    let a2 = silu(&h2);
    let mut y = conv(params, &bp.conv2, &a2, dims);
    y.iter_mut().zip(&x).for_each(|(o, i)| *o += i);
    let tape = record.then(|| BlockTape {
        dims,
        x,
        h1,
        wt,
        h2,
        a2,
    });
    Ok((y, tape))
}

fn block_backward(params: &[f64], grads: &mut [f64], bp: &BlockParams, tape: &BlockTape, g: &[f64]) -> Result<Vec<f64>> {
    let c = bp.conv1.shape.cout;
    let dims = tape.dims;
    let mut ga2 = conv_back(params, grads, &bp.conv2, &tape.a2, dims, g, true).expect("input grad");
    silu_backward(&tape.h2, &mut ga2);
    let ga2 = FeatureMap::new(c, dims, ga2)?;
    let ga1 = wtconv_backward(&tape.wt, &params[bp.wt.clone()], bp.wt_shape, &ga2, &mut grads[bp.wt.clone()])?;
    let mut ga1 = ga1.into_data();
    silu_backward(&tape.h1, &mut ga1);
    let mut gx = conv_back(params, grads, &bp.conv1, &tape.x, dims, &ga1, true).expect("input grad");
    gx.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    Ok(gx)
}

pub(super) fn forward(net: &DenoiserNet, input: &FeatureMap, record: bool) -> Result<(FeatureMap, Option<Tape>)> {
    let params = &net.params;
    let layout = &net.layout;
    let dims = input.dims();
    let out_channels = net.arch.state_channels;
    let Some(stem) = &layout.stem else {
        let y = conv(params, &layout.head, input.data(), dims);
        let tape = record.then(|| Tape {
            input: input.data().to_vec(),
            dims,
            stem_out: Vec::new(),
            enc: Vec::new(),
            dec: Vec::new(),
            head_in: input.data().to_vec(),
        });
        return Ok((FeatureMap::new(out_channels, dims, y)?, tape));
    };
    let c = net.arch.width;
    let levels = net.arch.levels;
    let stem_out = conv(params, stem, input.data(), dims);

    let mut enc_tapes = Vec::new();
    let mut skips: Vec<(Vec<f64>, [usize; 2])> = Vec::with_capacity(levels + 1);
    let mut cur = stem_out.clone();
    let mut cur_dims = dims;
    for (e, bp) in layout.enc.iter().enumerate() {
        if e > 0 {
            cur = avg_pool(&cur, c, cur_dims);
            cur_dims = [cur_dims[0] / 2, cur_dims[1] / 2];
        }
        let (y, tape) = block_forward(params, bp, cur, cur_dims, record)?;
        enc_tapes.extend(tape);
        skips.push((y.clone(), cur_dims));
        cur = y;
    }
    let mut dec_tapes = Vec::new();
    for (i, bp) in layout.dec.iter().enumerate() {
        let e = levels - 1 - i;
        let (skip, skip_dims) = &skips[e];
        let mut u = upsample(&cur, c, cur_dims, 1.0);
        u.iter_mut().zip(skip).for_each(|(a, b)| *a += b);
        cur_dims = *skip_dims;
        let (y, tape) = block_forward(params, bp, u, cur_dims, record)?;
        dec_tapes.extend(tape);
        cur = y;
    }
    let y = conv(params, &layout.head, &cur, dims);
    let tape = record.then(|| Tape {
        input: input.data().to_vec(),
        dims,
        stem_out,
        enc: enc_tapes,
        dec: dec_tapes,
        head_in: cur,
    });
    Ok((FeatureMap::new(out_channels, dims, y)?, tape))
}

/// Gradient of `<grad_out, net(input)>` with respect to every parameter,
/// accumulated into `grads`.
pub(super) fn backward(net: &DenoiserNet, tape: &Tape, grad_out: &[f64], grads: &mut [f64]) -> Result<()> {
    let params = &net.params;
    let layout = &net.layout;
    let dims = tape.dims;
    let Some(stem) = &layout.stem else {
        conv_back(params, grads, &layout.head, &tape.head_in, dims, grad_out, false);
        return Ok(());
    };
    let c = net.arch.width;
    let levels = net.arch.levels;
    let mut g = conv_back(params, grads, &layout.head, &tape.head_in, dims, grad_out, true).expect("input grad");

    let mut skip_grads: Vec<Option<Vec<f64>>> = (0..=levels).map(|_| None).collect();
    let add_into = |slot: &mut Option<Vec<f64>>, v: Vec<f64>| match slot {
        Some(acc) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
        None => *slot = Some(v),
    };
    // decoder ran for e = levels-1 down to 0; unwind in reverse
    for (i, bp) in layout.dec.iter().enumerate().rev() {
        let e = levels - 1 - i;
        let gu = block_backward(params, grads, bp, &tape.dec[i], &g)?;
        let fine = tape.dec[i].dims;
        add_into(&mut skip_grads[e], gu.clone());
        g = sum_pool(&gu, c, fine);
    }
    add_into(&mut skip_grads[levels], g);
    let mut carry: Option<Vec<f64>> = None;
    for e in (0..=levels).rev() {
        let mut ge = skip_grads[e].take().expect("every level has a gradient");
        if let Some(cg) = carry.take() {
            ge.iter_mut().zip(&cg).for_each(|(a, b)| *a += b);
        }
        let gx = block_backward(params, grads, &layout.enc[e], &tape.enc[e], &ge)?;
        if e > 0 {
            let half = tape.enc[e].dims;
            carry = Some(upsample(&gx, c, half, 0.25));
        } else {
            conv_back(params, grads, stem, &tape.input, dims, &gx, false);
        }
    }
    let _ = &tape.stem_out;
    Ok(())
}
