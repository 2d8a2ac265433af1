//! The operator set: each function is a pure tensor-in, tensor-out map.
//!
//! Conventions pinned here (and relied on by the shipped architecture
//! files): convolution is cross-correlation with zero padding and floor
//! output arithmetic; pooling uses ceil output arithmetic where a window
//! may start in-bounds and run into the padding; max pooling ignores
//! padding positions while average pooling divides by the full kernel
//! area; LRN normalizes across channels with the window clipped at the
//! channel boundaries.

use super::tensor::{format_shape, Tensor};
use crate::{Error, Result};

fn require_3d<'t>(t: &'t Tensor, layer: &str) -> Result<(&'t [usize], usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            layer: layer.to_string(),
            expected: "c x h x w".to_string(),
            got: format_shape(s),
        });
    }
    Ok((s, s[0], s[1], s[2]))
}

/// Output extent of a floor-mode sliding window.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if input + 2 * pad < kernel {
        return Err(Error::InvalidSpec(format!(
            "kernel {kernel} does not fit input {input} with pad {pad}"
        )));
    }
    Ok((input + 2 * pad - kernel) / stride + 1)
}

/// Output extent of a ceil-mode sliding window (pooling).
///
/// A window may start in-bounds and extend into the padding, but the last
/// window must start inside the input plus left padding; together with
/// kernel > pad this keeps every window non-empty.
pub fn pool_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if kernel == 0 || kernel <= pad {
        return Err(Error::InvalidSpec(format!(
            "degenerate pooling window: kernel {kernel}, pad {pad}"
        )));
    }
    if input + 2 * pad < kernel {
        return Err(Error::InvalidSpec(format!(
            "kernel {kernel} does not fit input {input} with pad {pad}"
        )));
    }
    let mut out = (input + 2 * pad - kernel).div_ceil(stride) + 1;
    while out > 1 && (out - 1) * stride >= input + pad {
        out -= 1;
    }
    Ok(out)
}

/// Grouped 2-d cross-correlation with zero padding.
///
/// `kernel` has shape [out_channels, in_channels/groups, kh, kw] and
/// `bias` length out_channels.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f32],
    stride: usize,
    pad: usize,
    groups: usize,
) -> Result<Tensor> {
    let (_, in_c, in_h, in_w) = require_3d(input, "conv")?;
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::ShapeMismatch {
            layer: "conv".to_string(),
            expected: "out x in/groups x kh x kw kernel".to_string(),
            got: format_shape(ks),
        });
    }
    let (out_c, k_in, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
    if groups == 0 || in_c % groups != 0 || out_c % groups != 0 {
        return Err(Error::InvalidSpec(format!(
            "channels not divisible by groups: in {in_c}, out {out_c}, groups {groups}"
        )));
    }
    if k_in != in_c / groups {
        return Err(Error::ShapeMismatch {
            layer: "conv".to_string(),
            expected: format!("kernel in-channels {}", in_c / groups),
            got: k_in.to_string(),
        });
    }
    if bias.len() != out_c {
        return Err(Error::DimensionMismatch {
            expected: out_c,
            got: bias.len(),
        });
    }
    let out_h = conv_out_dim(in_h, kh, stride, pad)?;
    let out_w = conv_out_dim(in_w, kw, stride, pad)?;

    let ic_per_g = in_c / groups;
    let oc_per_g = out_c / groups;
    let idata = input.data();
    let kdata = kernel.data();
    let mut out = vec![0.0f32; out_c * out_h * out_w];

    for oc in 0..out_c {
        let g = oc / oc_per_g;
        let ic0 = g * ic_per_g;
        let kbase = oc * ic_per_g * kh * kw;
        for oy in 0..out_h {
            let iy0 = (oy * stride) as isize - pad as isize;
            for ox in 0..out_w {
                let ix0 = (ox * stride) as isize - pad as isize;
                let mut acc = bias[oc];
                for ic in 0..ic_per_g {
                    let ibase = (ic0 + ic) * in_h * in_w;
                    let kc = kbase + ic * kh * kw;
                    for ky in 0..kh {
                        let iy = iy0 + ky as isize;
                        if iy < 0 || iy >= in_h as isize {
                            continue;
                        }
                        let irow = ibase + iy as usize * in_w;
                        let krow = kc + ky * kw;
                        for kx in 0..kw {
                            let ix = ix0 + kx as isize;
                            if ix < 0 || ix >= in_w as isize {
                                continue;
                            }
                            acc += idata[irow + ix as usize] * kdata[krow + kx];
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc;
            }
        }
    }
    Tensor::new(vec![out_c, out_h, out_w], out)
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Across-channel local response normalization.
///
/// b_c = a_c / (k + (alpha/n) * sum over the size-n channel window of a^2)^beta,
/// window clipped at the channel boundaries.
pub fn lrn(input: &Tensor, n: usize, alpha: f32, beta: f32, k: f32) -> Result<Tensor> {
    let (_, c, h, w) = require_3d(input, "lrn")?;
    if n == 0 || n.is_multiple_of(2) {
        return Err(Error::InvalidSpec(format!(
            "lrn local size must be odd, got {n}"
        )));
    }
    let half = n / 2;
    let data = input.data();
    let mut out = vec![0.0f32; data.len()];
    let plane = h * w;
    for y in 0..h {
        for x in 0..w {
            let off = y * w + x;
            for ch in 0..c {
                let lo = ch.saturating_sub(half);
                let hi = (ch + half).min(c - 1);
                let mut sq = 0.0f32;
                for cc in lo..=hi {
                    let v = data[cc * plane + off];
                    sq += v * v;
                }
                let denom = (k + alpha / n as f32 * sq).powf(beta);
                out[ch * plane + off] = data[ch * plane + off] / denom;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Max pooling; out-of-bounds (padding) positions are ignored.
pub fn maxpool(input: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pool(input, kernel, stride, pad, true)
}

/// Average pooling; padding contributes zero and the divisor is always
/// the full kernel area.
pub fn avgpool(input: &Tensor, kernel: usize, stride: usize, pad: usize) -> Result<Tensor> {
    pool(input, kernel, stride, pad, false)
}

fn pool(input: &Tensor, kernel: usize, stride: usize, pad: usize, is_max: bool) -> Result<Tensor> {
    let (_, c, in_h, in_w) = require_3d(input, "pool")?;
    let out_h = pool_out_dim(in_h, kernel, stride, pad)?;
    let out_w = pool_out_dim(in_w, kernel, stride, pad)?;
    let data = input.data();
    let mut out = vec![0.0f32; c * out_h * out_w];
    let area = (kernel * kernel) as f32;

    for ch in 0..c {
        let ibase = ch * in_h * in_w;
        for oy in 0..out_h {
            let y0 = (oy * stride) as isize - pad as isize;
            for ox in 0..out_w {
                let x0 = (ox * stride) as isize - pad as isize;
                let mut best = f32::NEG_INFINITY;
                let mut sum = 0.0f32;
                for ky in 0..kernel {
                    let iy = y0 + ky as isize;
                    if iy < 0 || iy >= in_h as isize {
                        continue;
                    }
                    let row = ibase + iy as usize * in_w;
                    for kx in 0..kernel {
                        let ix = x0 + kx as isize;
                        if ix < 0 || ix >= in_w as isize {
                            continue;
                        }
                        let v = data[row + ix as usize];
                        if v > best {
                            best = v;
                        }
                        sum += v;
                    }
                }
                out[(ch * out_h + oy) * out_w + ox] = if is_max { best } else { sum / area };
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// y = Wx + b on the row-major flattened input.
pub fn fully_connected(input: &Tensor, matrix: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let ms = matrix.shape();
    if ms.len() != 2 {
        return Err(Error::ShapeMismatch {
            layer: "fc".to_string(),
            expected: "out x in matrix".to_string(),
            got: format_shape(ms),
        });
    }
    let (out_n, in_n) = (ms[0], ms[1]);
    if input.len() != in_n {
        return Err(Error::DimensionMismatch {
            expected: in_n,
            got: input.len(),
        });
    }
    if bias.len() != out_n {
        return Err(Error::DimensionMismatch {
            expected: out_n,
            got: bias.len(),
        });
    }
    let x = input.data();
    let w = matrix.data();
    let mut out = vec![0.0f32; out_n];
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * in_n..(o + 1) * in_n];
        let mut acc = 0.0f32;
        for (wv, xv) in row.iter().zip(x.iter()) {
            acc += wv * xv;
        }
        *out_v = acc + bias[o];
    }
    Tensor::new(vec![out_n], out)
}

/// Numerically stable softmax over the flattened tensor.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    if input.is_empty() {
        return Err(Error::EmptyInput("softmax".to_string()));
    }
    let data = input.data();
    let max = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = data.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    let out = exps.iter().map(|&e| e / sum).collect();
    Tensor::new(input.shape().to_vec(), out)
}

/// Concatenate along `axis`; all other dimensions must agree.
pub fn concat(inputs: &[&Tensor], axis: usize) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::EmptyInput("concat".to_string()));
    }
    let first = inputs[0].shape();
    if axis >= first.len() {
        return Err(Error::InvalidSpec(format!(
            "concat axis {axis} out of range for rank {}",
            first.len()
        )));
    }
    let mut out_shape = first.to_vec();
    for t in &inputs[1..] {
        let s = t.shape();
        if s.len() != first.len()
            || s.iter()
                .zip(first.iter())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            return Err(Error::ShapeMismatch {
                layer: "concat".to_string(),
                expected: format_shape(first),
                got: format_shape(s),
            });
        }
        out_shape[axis] += s[axis];
    }

    // Copy in blocks: outer = dims before axis, inner = dims after.
    let outer: usize = first[..axis].iter().product();
    let inner: usize = first[axis + 1..].iter().product();
    let total: usize = out_shape.iter().product();
    let mut out = Vec::with_capacity(total);
    for o in 0..outer {
        for t in inputs {
            let ax = t.shape()[axis];
            let block = ax * inner;
            let start = o * block;
            out.extend_from_slice(&t.data()[start..start + block]);
        }
    }
    Tensor::new(out_shape, out)
}
