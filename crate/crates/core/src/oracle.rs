//! Independent reference implementations used by the test suites.
//!
//! Everything here is written as plainly as possible — direct nested
//! loops, f64 throughout — and shares no code with the implementation
//! paths it checks. The operator references recompute their own output
//! geometry; the SVM reference solves the dual by projected gradient
//! rather than coordinate descent; the GMM log-likelihood is evaluated
//! with its own log-sum-exp.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

/// Direct six-loop grouped cross-correlation.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    input: &[f32],
    in_c: usize,
    in_h: usize,
    in_w: usize,
    kernel: &[f32],
    out_c: usize,
    kh: usize,
    kw: usize,
    bias: &[f32],
    stride: usize,
    pad: usize,
    groups: usize,
) -> (Vec<f32>, usize, usize) {
    let out_h = (in_h + 2 * pad - kh) / stride + 1;
    let out_w = (in_w + 2 * pad - kw) / stride + 1;
    let icg = in_c / groups;
    let ocg = out_c / groups;
    let mut out = vec![0.0f32; out_c * out_h * out_w];
    for oc in 0..out_c {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = bias[oc] as f64;
                let g = oc / ocg;
                for ic in 0..icg {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= in_h as isize || ix >= in_w as isize {
                                continue;
                            }
                            let iv = input
                                [(g * icg + ic) * in_h * in_w + iy as usize * in_w + ix as usize];
                            let kv = kernel[((oc * icg + ic) * kh + ky) * kw + kx];
                            acc += iv as f64 * kv as f64;
                        }
                    }
                }
                out[(oc * out_h + oy) * out_w + ox] = acc as f32;
            }
        }
    }
    (out, out_h, out_w)
}

/// Direct windowed-sum LRN across channels.
pub fn lrn_naive(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    n: usize,
    alpha: f32,
    beta: f32,
    k: f32,
) -> Vec<f32> {
    let half = n / 2;
    let mut out = vec![0.0f32; input.len()];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut sq = 0.0f64;
                for cc in ch.saturating_sub(half)..=(ch + half).min(c - 1) {
                    let v = input[cc * h * w + y * w + x] as f64;
                    sq += v * v;
                }
                let denom = (k as f64 + alpha as f64 / n as f64 * sq).powf(beta as f64);
                out[ch * h * w + y * w + x] = (input[ch * h * w + y * w + x] as f64 / denom) as f32;
            }
        }
    }
    out
}

/// Ceil-mode pooling output extent: windows may run into the padding, but
/// the last window must start inside input + left pad.
pub fn pool_extent_naive(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let mut out = (input + 2 * pad - kernel).div_ceil(stride) + 1;
    while out > 1 && (out - 1) * stride >= input + pad {
        out -= 1;
    }
    out
}

/// Direct window-scan pooling. `is_max` picks max-over-valid; otherwise
/// sum of in-bounds values over the full kernel area.
pub fn pool_naive(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    is_max: bool,
) -> (Vec<f32>, usize, usize) {
    let oh = pool_extent_naive(h, kernel, stride, pad);
    let ow = pool_extent_naive(w, kernel, stride, pad);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut sum = 0.0f64;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        let v = input[ch * h * w + iy as usize * w + ix as usize] as f64;
                        best = best.max(v);
                        sum += v;
                    }
                }
                out[(ch * oh + oy) * ow + ox] = if is_max {
                    best as f32
                } else {
                    (sum / (kernel * kernel) as f64) as f32
                };
            }
        }
    }
    (out, oh, ow)
}

/// y = Wx + b by explicit dot products.
pub fn fc_naive(input: &[f32], matrix: &[f32], out_n: usize, in_n: usize, bias: &[f32]) -> Vec<f32> {
    let mut out = vec![0.0f32; out_n];
    for o in 0..out_n {
        let mut acc = bias[o] as f64;
        for i in 0..in_n {
            acc += matrix[o * in_n + i] as f64 * input[i] as f64;
        }
        out[o] = acc as f32;
    }
    out
}

/// Mean per-descriptor log-likelihood of a diagonal GMM, f64 end to end.
pub fn gmm_mean_loglik(
    weights: &[f64],
    means: &[Vec<f64>],
    variances: &[Vec<f64>],
    points: &[Vec<f64>],
) -> f64 {
    let k = weights.len();
    let d = means[0].len();
    let mut total = 0.0f64;
    for x in points {
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let mut lp = weights[j].ln();
            for r in 0..d {
                let v = variances[j][r];
                let diff = x[r] - means[j][r];
                lp += -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + diff * diff / v);
            }
            comps.push(lp);
        }
        let m = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + comps.iter().map(|&lp| (lp - m).exp()).sum::<f64>().ln();
    }
    total / points.len() as f64
}

/// Projected-gradient reference solver for the L1-hinge dual with the
/// regularized (feature-augmented) bias, f64 throughout. Returns the
/// augmented weight vector [w..., b].
pub fn svm_reference_pg(
    features: &[Vec<f32>],
    labels: &[i8],
    c: f64,
    iterations: usize,
) -> Vec<f64> {
    let n = features.len();
    let dim = features[0].len();
    // Augmented gram matrix Q_ij = y_i y_j (x_i . x_j + 1).
    let mut q = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut dot = 1.0f64;
            for r in 0..dim {
                dot += features[i][r] as f64 * features[j][r] as f64;
            }
            q[i * n + j] = labels[i] as f64 * labels[j] as f64 * dot;
        }
    }
    // Step size below 1/||Q||_2 via the max row sum bound.
    let max_row: f64 = (0..n)
        .map(|i| (0..n).map(|j| q[i * n + j].abs()).sum())
        .fold(0.0f64, f64::max);
    let eta = 0.9 / max_row.max(1e-12);

    let mut alpha = vec![0.0f64; n];
    for _ in 0..iterations {
        let mut grad = vec![-1.0f64; n];
        for i in 0..n {
            for j in 0..n {
                grad[i] += q[i * n + j] * alpha[j];
            }
        }
        for i in 0..n {
            alpha[i] = (alpha[i] - eta * grad[i]).clamp(0.0, c);
        }
    }
    let mut w = vec![0.0f64; dim + 1];
    for i in 0..n {
        let coef = alpha[i] * labels[i] as f64;
        for r in 0..dim {
            w[r] += coef * features[i][r] as f64;
        }
        w[dim] += coef;
    }
    w
}

/// Primal objective for the augmented-bias formulation, f64.
pub fn svm_primal_naive(features: &[Vec<f32>], labels: &[i8], w_aug: &[f64], c: f64) -> f64 {
    let dim = features[0].len();
    let mut obj = 0.5 * w_aug.iter().map(|v| v * v).sum::<f64>();
    for (x, &y) in features.iter().zip(labels.iter()) {
        let mut dot = w_aug[dim];
        for r in 0..dim {
            dot += w_aug[r] * x[r] as f64;
        }
        obj += c * (1.0 - y as f64 * dot).max(0.0);
    }
    obj
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_extent_matches_known_cases() {
        assert_eq!(pool_extent_naive(55, 3, 2, 0), 27);
        assert_eq!(pool_extent_naive(27, 3, 2, 0), 13);
        assert_eq!(pool_extent_naive(13, 3, 2, 0), 6);
        assert_eq!(pool_extent_naive(112, 3, 2, 0), 56);
        assert_eq!(pool_extent_naive(6, 3, 2, 0), 3);
        assert_eq!(pool_extent_naive(4, 3, 2, 1), 3);
        assert_eq!(pool_extent_naive(14, 3, 1, 1), 14);
    }

    #[test]
    fn pg_reference_solves_two_point_case() {
        let features = vec![vec![-1.0f32], vec![1.0]];
        let labels = vec![-1i8, 1];
        let w = svm_reference_pg(&features, &labels, 10.0, 50_000);
        assert!((w[0] - 1.0).abs() < 1e-6, "w {w:?}");
        assert!(w[1].abs() < 1e-6, "b {w:?}");
    }
}
