//! Dense building blocks shared by the spiking classifier and the cVAE.
//!
//! Everything works on flat row-major `f64` buffers with explicit shapes.
//! Each op has a forward and a matching backward; backward functions
//! accumulate into caller-owned gradient buffers.

pub mod conv;
pub mod optim;

use ndarray::linalg::general_mat_mul;
use rand::Rng;

pub use conv::ConvGeom;
pub use optim::{cosine_lr, Adam, AdamConfig};

use conv::{add_into, view, view_mut};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Uniform `[-b, b]` with `b = sqrt(6 / fan_in)` (Kaiming, fan-in mode).
pub fn kaiming_uniform<R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// `y[n][out] = x[n][in] * W^T + b` with `W` stored `[out][in]`.
pub fn linear_forward(weight: &[f64], bias: &[f64], input: &[f64], n: usize, in_f: usize, out_f: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    let mut y = view_mut(n, out_f, &mut out);
    general_mat_mul(1.0, &view(n, in_f, input), &view(out_f, in_f, weight).t(), 1.0, &mut y);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    n: usize,
    in_f: usize,
    out_f: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let dy = view(n, out_f, grad_out);
    let mut dw = view_mut(out_f, in_f, grad_weight);
    general_mat_mul(1.0, &dy.t(), &view(n, in_f, input), 1.0, &mut dw);
    for row in grad_out.chunks(out_f) {
        add_into(grad_bias, row);
    }
    need_input_grad.then(|| {
        let mut dx = vec![0.0; n * in_f];
        let mut dxm = view_mut(n, in_f, &mut dx);
        general_mat_mul(1.0, &dy, &view(out_f, in_f, weight), 0.0, &mut dxm);
        dx
    })
}

/// Non-overlapping-capable max pooling over `[n][c][h][w]`. Returns the
/// pooled tensor and the flat argmax index of every output cell.
pub fn maxpool2d_forward(
    input: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = base + (oy * stride + ky) * w + ox * stride + kx;
                        if input[i] > best {
                            best = input[i];
                            at = i;
                        }
                    }
                }
                out.push(best);
                idx.push(at as u32);
            }
        }
    }
    (out, idx)
}

pub fn maxpool2d_backward(grad_out: &[f64], argmax: &[u32], input_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; input_len];
    for (&g, &i) in grad_out.iter().zip(argmax) {
        dx[i as usize] += g;
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// What batch-statistics normalisation needs to run backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased variance (the one used for normalisation).
    pub var: Vec<f64>,
    pub count: usize,
}

/// Per-channel normalisation of `[n][c][plane]` using batch statistics.
pub fn batchnorm_train_forward(
    input: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f64],
    beta: &[f64],
) -> (Vec<f64>, BatchNormCache) {
    let count = n * plane;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for f in 0..n {
        for ch in 0..c {
            let s = &input[(f * c + ch) * plane..(f * c + ch + 1) * plane];
            mean[ch] += s.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    for f in 0..n {
        for ch in 0..c {
            let s = &input[(f * c + ch) * plane..(f * c + ch + 1) * plane];
            var[ch] += s.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; input.len()];
    let mut out = vec![0.0; input.len()];
    for f in 0..n {
        for ch in 0..c {
            let r = (f * c + ch) * plane..(f * c + ch + 1) * plane;
            for i in r {
                let xh = (input[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (
        out,
        BatchNormCache {
            xhat,
            inv_std,
            mean,
            var,
            count,
        },
    )
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_eval_forward(
    input: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for f in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] / (running_var[ch] + BN_EPS).sqrt();
            let r = (f * c + ch) * plane..(f * c + ch + 1) * plane;
            for i in r {
                out[i] = (input[i] - running_mean[ch]) * scale + beta[ch];
            }
        }
    }
    out
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    grad_out: &[f64],
    n: usize,
    c: usize,
    plane: usize,
    gamma: &[f64],
    grad_gamma: &mut [f64],
    grad_beta: &mut [f64],
) -> Vec<f64> {
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for f in 0..n {
        for ch in 0..c {
            for i in (f * c + ch) * plane..(f * c + ch + 1) * plane {
                sum_dy[ch] += grad_out[i];
                sum_dy_xhat[ch] += grad_out[i] * cache.xhat[i];
            }
        }
    }
    for ch in 0..c {
        grad_gamma[ch] += sum_dy_xhat[ch];
        grad_beta[ch] += sum_dy[ch];
    }
    let m = cache.count as f64;
    let mut dx = vec![0.0; grad_out.len()];
    for f in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            for i in (f * c + ch) * plane..(f * c + ch + 1) * plane {
                dx[i] = k * (m * grad_out[i] - sum_dy[ch] - cache.xhat[i] * sum_dy_xhat[ch]);
            }
        }
    }
    dx
}
