//! Raw numeric kernels on row-major `f64` buffers. No graph bookkeeping here.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Splits `shape` around `axis` into (outer, axis_len, inner) extents.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Batched matmul: `[b, m, k] x [b, k, n] -> [b, m, n]`.
pub fn matmul(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; batch * m * n];
    for bi in 0..batch {
        let a = &a[bi * m * k..(bi + 1) * m * k];
        let b = &b[bi * k * n..(bi + 1) * k * n];
        let o = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            let orow = &mut o[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (ov, bv) in orow.iter_mut().zip(brow) {
                    *ov += av * bv;
                }
            }
        }
    }
    out
}

pub fn permute(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let rank = shape.len();
    let new_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(data[offset]);
        // increment the multi-index over the output shape
        for d in (0..rank).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < new_shape[d] {
                break;
            }
            offset -= strides[d] * new_shape[d];
            idx[d] = 0;
        }
    }
    (out, new_shape)
}

pub fn conv_out_len(len: usize, stride: usize) -> usize {
    (len - 1) / stride + 1
}

/// im2col for a 3x3 kernel with zero padding 1: `[C, H, W] -> [C*9, Ho*Wo]`.
pub fn unfold3x3(x: &[f64], c: usize, h: usize, w: usize, stride: usize) -> Vec<f64> {
    let ho = conv_out_len(h, stride);
    let wo = conv_out_len(w, stride);
    let cols = ho * wo;
    let mut out = vec![0.0; c * 9 * cols];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[row + oy * wo + ox] = x[ci * h * w + iy as usize * w + ix as usize];
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`unfold3x3`]: scatter-adds columns back into `[C, H, W]`.
pub fn fold3x3(cols_data: &[f64], c: usize, h: usize, w: usize, stride: usize) -> Vec<f64> {
    let ho = conv_out_len(h, stride);
    let wo = conv_out_len(w, stride);
    let cols = ho * wo;
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * cols;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        out[ci * h * w + iy as usize * w + ix as usize] += cols_data[row + oy * wo + ox];
                    }
                }
            }
        }
    }
    out
}

/// Nearest-neighbour x2 upsample of the last two axes.
pub fn upsample2(x: &[f64], outer: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; outer * h2 * w2];
    for o in 0..outer {
        for y in 0..h2 {
            for xx in 0..w2 {
                out[o * h2 * w2 + y * w2 + xx] = x[o * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// 2x2 sum pooling of the last two axes (adjoint of [`upsample2`]).
pub fn sumpool2(x: &[f64], outer: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = vec![0.0; outer * h2 * w2];
    for o in 0..outer {
        for y in 0..h {
            for xx in 0..w {
                out[o * h2 * w2 + (y / 2) * w2 + xx / 2] += x[o * h * w + y * w + xx];
            }
        }
    }
    out
}

pub fn sum_axis(x: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for i in 0..n {
            let src = &x[(o * n + i) * inner..(o * n + i + 1) * inner];
            let dst = &mut out[o * inner..(o + 1) * inner];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

pub fn broadcast_axis(x: &[f64], outer: usize, n: usize, inner: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        let src = &x[o * inner..(o + 1) * inner];
        for _ in 0..n {
            out.extend_from_slice(src);
        }
    }
    out
}

pub fn slice_axis(x: &[f64], outer: usize, n: usize, inner: usize, start: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x[(o * n + start) * inner..(o * n + start + len) * inner]);
    }
    out
}

pub fn pad_axis(x: &[f64], outer: usize, len: usize, inner: usize, start: usize, total: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * total * inner];
    for o in 0..outer {
        out[(o * total + start) * inner..(o * total + start + len) * inner]
            .copy_from_slice(&x[o * len * inner..(o + 1) * len * inner]);
    }
    out
}

pub fn softmax_last(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            s += *o;
        }
        for o in orow.iter_mut() {
            *o /= s;
        }
    }
    out
}

pub fn log_softmax_last(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for (o, v) in orow.iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    out
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// Polynomial `P_n` (ascending coefficients) with `gelu^(n)(x) = pdf(x) * P_n(x)` for n >= 2.
fn gelu_poly(order: usize) -> Vec<f64> {
    debug_assert!(order >= 2);
    let mut p = vec![2.0, 0.0, -1.0];
    for _ in 2..order {
        // P_{k+1} = P_k' - x P_k
        let mut next = vec![0.0; p.len() + 1];
        for (i, c) in p.iter().enumerate().skip(1) {
            next[i - 1] += *c * i as f64;
        }
        for (i, c) in p.iter().enumerate() {
            next[i + 1] -= *c;
        }
        p = next;
    }
    p
}

/// The `order`-th derivative of the exact (erf-based) GELU.
pub fn gelu_derivative(x: &[f64], order: usize) -> Vec<f64> {
    match order {
        0 => x.iter().map(|&v| v * normal_cdf(v)).collect(),
        1 => x.iter().map(|&v| normal_cdf(v) + v * normal_pdf(v)).collect(),
        _ => {
            let p = gelu_poly(order);
            x.iter()
                .map(|&v| {
                    let poly = p.iter().rev().fold(0.0, |acc, c| acc * v + c);
                    normal_pdf(v) * poly
                })
                .collect()
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivatives_match_finite_differences() {
        let xs = [-2.3, -0.7, 0.0, 0.4, 1.9];
        let h = 1e-5;
        for order in 0..5 {
            let plus: Vec<f64> = xs.iter().map(|x| x + h).collect();
            let minus: Vec<f64> = xs.iter().map(|x| x - h).collect();
            let fp = gelu_derivative(&plus, order);
            let fm = gelu_derivative(&minus, order);
            let next = gelu_derivative(&xs, order + 1);
            for i in 0..xs.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - next[i]).abs() < 1e-6, "order {order} x {}", xs[i]);
            }
        }
    }

    #[test]
    fn permute_transposes_matrix() {
        let (out, shape) = permute(&[1., 2., 3., 4., 5., 6.], &[2, 3], &[1, 0]);
        assert_eq!(shape, vec![3, 2]);
        assert_eq!(out, vec![1., 4., 2., 5., 3., 6.]);
    }

    #[test]
    fn fold_is_adjoint_of_unfold() {
        // <unfold(x), y> == <x, fold(y)>
        let (c, h, w) = (2, 5, 4);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        for stride in [1, 2] {
            let u = unfold3x3(&x, c, h, w, stride);
            let y: Vec<f64> = (0..u.len()).map(|i| (i as f64 * 0.11).cos()).collect();
            let lhs: f64 = u.iter().zip(&y).map(|(a, b)| a * b).sum();
            let f = fold3x3(&y, c, h, w, stride);
            let rhs: f64 = x.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
