//! Batched 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Tensors are flat `[n][c][h][w]` slices. Weights of a convolution are
//! `[out_c][in_c * k * k]`; weights of a transposed convolution are
//! `[in_c][out_c * k * k]` (the layout of the convolution it transposes).
//! Gradient reductions over the batch use fixed-size frame groups summed in
//! order, so results do not depend on the rayon thread count.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Frames per partial-gradient group.
const REDUCE_GROUP: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    pub fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn weight_len(&self) -> usize {
        self.out_c * self.patch_len()
    }
}

pub(crate) fn view<'a>(rows: usize, cols: usize, data: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

pub(crate) fn view_mut<'a>(rows: usize, cols: usize, data: &'a mut [f64]) -> ArrayViewMut2<'a, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

/// Unfold one `[c][h][w]` image into `[c*k*k][oh*ow]` columns.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &input[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Fold columns back, accumulating into `out` (`[c][h][w]`).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let plane = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut out[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn im2col_geom(g: &ConvGeom, input: &[f64], cols: &mut [f64]) {
    im2col(input, g.in_c, g.in_h, g.in_w, g.k, g.stride, g.pad, g.out_h(), g.out_w(), cols);
}

fn col2im_geom(g: &ConvGeom, cols: &[f64], out: &mut [f64]) {
    col2im(cols, g.in_c, g.in_h, g.in_w, g.k, g.stride, g.pad, g.out_h(), g.out_w(), out);
}

/// `y = W * x + b` for `n` frames.
pub fn conv2d_forward(g: &ConvGeom, weight: &[f64], bias: &[f64], input: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(input.len(), n * g.in_len());
    let plane = g.out_h() * g.out_w();
    let mut out = vec![0.0; n * g.out_len()];
    let w = view(g.out_c, g.patch_len(), weight);
    out.par_chunks_mut(g.out_len())
        .zip(input.par_chunks(g.in_len()))
        .for_each_init(
            || vec![0.0; g.patch_len() * plane],
            |cols, (o, x)| {
                im2col_geom(g, x, cols);
                for (c, row) in o.chunks_mut(plane).enumerate() {
                    row.fill(bias[c]);
                }
                let mut y = view_mut(g.out_c, plane, o);
                general_mat_mul(1.0, &w, &view(g.patch_len(), plane, cols), 1.0, &mut y);
            },
        );
    out
}

/// Accumulates weight/bias gradients; returns the input gradient if asked.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    g: &ConvGeom,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    n: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = g.out_h() * g.out_w();
    let (in_len, out_len) = (g.in_len(), g.out_len());
    let w = view(g.out_c, g.patch_len(), weight);
    let mut grad_in = if need_input_grad {
        vec![0.0; n * in_len]
    } else {
        Vec::new()
    };
    let groups: Vec<usize> = (0..n).step_by(REDUCE_GROUP).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = groups
        .par_iter()
        .map(|&start| {
            let end = (start + REDUCE_GROUP).min(n);
            let mut dw = vec![0.0; g.weight_len()];
            let mut db = vec![0.0; g.out_c];
            let mut dx = if need_input_grad {
                vec![0.0; (end - start) * in_len]
            } else {
                Vec::new()
            };
            let mut cols = vec![0.0; g.patch_len() * plane];
            let mut dcols = vec![0.0; g.patch_len() * plane];
            for f in start..end {
                let x = &input[f * in_len..(f + 1) * in_len];
                let dy = &grad_out[f * out_len..(f + 1) * out_len];
                for (c, row) in dy.chunks(plane).enumerate() {
                    db[c] += row.iter().sum::<f64>();
                }
                im2col_geom(g, x, &mut cols);
                let dy_m = view(g.out_c, plane, dy);
                let mut dw_m = view_mut(g.out_c, g.patch_len(), &mut dw);
                general_mat_mul(1.0, &dy_m, &view(g.patch_len(), plane, &cols).t(), 1.0, &mut dw_m);
                if need_input_grad {
                    let mut dc = view_mut(g.patch_len(), plane, &mut dcols);
                    general_mat_mul(1.0, &w.t(), &dy_m, 0.0, &mut dc);
                    col2im_geom(g, &dcols, &mut dx[(f - start) * in_len..(f - start + 1) * in_len]);
                }
            }
            (dw, db, dx)
        })
        .collect();
    for (gi, (dw, db, dx)) in partials.into_iter().enumerate() {
        add_into(grad_weight, &dw);
        add_into(grad_bias, &db);
        if need_input_grad {
            let start = groups[gi] * in_len;
            grad_in[start..start + dx.len()].copy_from_slice(&dx);
        }
    }
    need_input_grad.then_some(grad_in)
}

/// Transposed convolution. `g` describes the *forward* convolution that maps
/// the large output back to the small input, i.e. `g.in_*` is the output
/// image of this layer and `g.out_*` its input.
pub fn conv_transpose2d_forward(
    g: &ConvGeom,
    weight: &[f64],
    bias: &[f64],
    input: &[f64],
    n: usize,
) -> Vec<f64> {
    // Here the "small" side has g.out_c channels (layer input) and the large
    // side g.in_c channels (layer output).
    let plane = g.out_h() * g.out_w();
    let (x_len, y_len) = (g.out_len(), g.in_len());
    let w = view(g.out_c, g.patch_len(), weight);
    let mut out = vec![0.0; n * y_len];
    let big_plane = g.in_h * g.in_w;
    out.par_chunks_mut(y_len)
        .zip(input.par_chunks(x_len))
        .for_each_init(
            || vec![0.0; g.patch_len() * plane],
            |cols, (o, x)| {
                let mut c = view_mut(g.patch_len(), plane, cols);
                general_mat_mul(1.0, &w.t(), &view(g.out_c, plane, x), 0.0, &mut c);
                for (ch, row) in o.chunks_mut(big_plane).enumerate() {
                    row.fill(bias[ch]);
                }
                col2im_geom(g, cols, o);
            },
        );
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    g: &ConvGeom,
    weight: &[f64],
    input: &[f64],
    grad_out: &[f64],
    n: usize,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let plane = g.out_h() * g.out_w();
    let (x_len, y_len) = (g.out_len(), g.in_len());
    let big_plane = g.in_h * g.in_w;
    let w = view(g.out_c, g.patch_len(), weight);
    let groups: Vec<usize> = (0..n).step_by(REDUCE_GROUP).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = groups
        .par_iter()
        .map(|&start| {
            let end = (start + REDUCE_GROUP).min(n);
            let mut dw = vec![0.0; g.weight_len()];
            let mut db = vec![0.0; g.in_c];
            let mut dx = if need_input_grad {
                vec![0.0; (end - start) * x_len]
            } else {
                Vec::new()
            };
            let mut dcols = vec![0.0; g.patch_len() * plane];
            for f in start..end {
                let x = &input[f * x_len..(f + 1) * x_len];
                let dy = &grad_out[f * y_len..(f + 1) * y_len];
                for (c, row) in dy.chunks(big_plane).enumerate() {
                    db[c] += row.iter().sum::<f64>();
                }
                im2col_geom(g, dy, &mut dcols);
                let dc = view(g.patch_len(), plane, &dcols);
                let mut dw_m = view_mut(g.out_c, g.patch_len(), &mut dw);
                general_mat_mul(1.0, &view(g.out_c, plane, x), &dc.t(), 1.0, &mut dw_m);
                if need_input_grad {
                    let mut dx_m = view_mut(g.out_c, plane, &mut dx[(f - start) * x_len..(f - start + 1) * x_len]);
                    general_mat_mul(1.0, &w, &dc, 0.0, &mut dx_m);
                }
            }
            (dw, db, dx)
        })
        .collect();
    let mut grad_in = if need_input_grad {
        Vec::with_capacity(n * x_len)
    } else {
        Vec::new()
    };
    for (dw, db, dx) in partials {
        add_into(grad_weight, &dw);
        add_into(grad_bias, &db);
        grad_in.extend(dx);
    }
    need_input_grad.then_some(grad_in)
}

pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_conv(g: &ConvGeom, w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut y = vec![0.0; g.out_len()];
        for o in 0..g.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[o];
                    for c in 0..g.in_c {
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < g.in_h && (ix as usize) < g.in_w {
                                    s += w[((o * g.in_c + c) * g.k + ky) * g.k + kx]
                                        * x[(c * g.in_h + iy as usize) * g.in_w + ix as usize];
                                }
                            }
                        }
                    }
                    y[(o * oh + oy) * ow + ox] = s;
                }
            }
        }
        y
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * scale).collect()
    }

    #[test]
    fn matches_naive_convolution() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 2), (2, 1, 4)] {
            let g = ConvGeom { in_c: 2, out_c: 3, k, stride, pad, in_h: 7, in_w: 6 };
            let w = seq(g.weight_len(), 0.1);
            let b = vec![0.5, -0.25, 0.0];
            let x = seq(2 * g.in_len(), 0.3);
            let y = conv2d_forward(&g, &w, &b, &x, 2);
            for f in 0..2 {
                let r = naive_conv(&g, &w, &b, &x[f * g.in_len()..(f + 1) * g.in_len()]);
                for (a, e) in y[f * g.out_len()..(f + 1) * g.out_len()].iter().zip(&r) {
                    assert!((a - e).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn transposed_is_adjoint_of_conv() {
        // <conv(x), y> == <x, conv_t(y)> with zero biases.
        let g = ConvGeom { in_c: 2, out_c: 3, k: 4, stride: 2, pad: 1, in_h: 8, in_w: 8 };
        let w = seq(g.weight_len(), 0.1);
        let x = seq(g.in_len(), 0.2);
        let y = seq(g.out_len(), 0.3);
        let cx = conv2d_forward(&g, &w, &[0.0; 3], &x, 1);
        let ty = conv_transpose2d_forward(&g, &w, &[0.0; 2], &y, 1);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let g = ConvGeom { in_c: 2, out_c: 2, k: 3, stride: 2, pad: 1, in_h: 5, in_w: 5 };
        let w = seq(g.weight_len(), 0.1);
        let b = vec![0.1, -0.2];
        let x = seq(3 * g.in_len(), 0.2);
        let dy = seq(3 * g.out_len(), 0.05);
        let loss = |w: &[f64], b: &[f64], x: &[f64]| -> f64 {
            conv2d_forward(&g, w, b, x, 3).iter().zip(&dy).map(|(a, d)| a * d).sum()
        };
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 2];
        let gx = conv2d_backward(&g, &w, &x, &dy, 3, &mut gw, &mut gb, true).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&p, &b, &x) - loss(&m, &b, &x)) / (2.0 * h) - gw[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&w, &b, &p) - loss(&w, &b, &m)) / (2.0 * h) - gx[i]).abs() < 1e-7);
        }
        let bsum: f64 = dy.chunks(g.out_h() * g.out_w()).step_by(2).flatten().sum();
        assert!((gb[0] - bsum).abs() < 1e-12);
    }

    #[test]
    fn conv_transpose_backward_matches_finite_difference() {
        let g = ConvGeom { in_c: 1, out_c: 2, k: 4, stride: 2, pad: 1, in_h: 6, in_w: 6 };
        let w = seq(g.weight_len(), 0.1);
        let b = vec![0.3];
        let x = seq(2 * g.out_len(), 0.2);
        let dy = seq(2 * g.in_len(), 0.07);
        let loss = |w: &[f64], x: &[f64]| -> f64 {
            conv_transpose2d_forward(&g, w, &b, x, 2).iter().zip(&dy).map(|(a, d)| a * d).sum()
        };
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; 1];
        let gx = conv_transpose2d_backward(&g, &w, &x, &dy, 2, &mut gw, &mut gb, true).unwrap();
        let h = 1e-5;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&p, &x) - loss(&m, &x)) / (2.0 * h) - gw[i]).abs() < 1e-7);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&w, &p) - loss(&w, &m)) / (2.0 * h) - gx[i]).abs() < 1e-7);
        }
        assert!((gb[0] - dy.iter().sum::<f64>()).abs() < 1e-10);
    }
}
