//! Composite layers assembled from primitives. Their gradients come for free
//! from the primitive rules, including higher orders.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::Tensor;

/// `x [n, in] @ w [in, out] + b [out]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add(&b.broadcast_axis(0, x.shape()[0])?),
        None => Ok(y),
    }
}

/// 3x3 convolution with zero padding 1. `x [Cin, H, W]`, `w [Cout, Cin, 3, 3]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || ws[2] != 3 || ws[3] != 3 {
        return shape_err("conv2d", &[xs, ws]);
    }
    if stride != 1 && stride != 2 {
        return arg_err("conv2d", format!("stride {stride} not in {{1, 2}}"));
    }
    let cout = ws[0];
    let ho = (xs[1] - 1) / stride + 1;
    let wo = (xs[2] - 1) / stride + 1;
    let cols = x.unfold3x3(stride)?;
    let mut y = w.reshape(&[cout, xs[0] * 9])?.matmul(&cols)?;
    if let Some(b) = b {
        if b.shape() != [cout] {
            return shape_err("conv2d", &[b.shape(), &[cout]]);
        }
        y = y.add(&b.broadcast_axis(1, ho * wo)?)?;
    }
    y.reshape(&[cout, ho, wo])
}

/// Layer norm over the last axis of `x [n, d]`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() != 2 || gamma.shape() != [x.shape()[1]] || beta.shape() != gamma.shape() {
        return shape_err("layer_norm", &[x.shape(), gamma.shape(), beta.shape()]);
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let inv_d = 1.0 / d as f64;
    let mean = x.sum_axis(1)?.scale(inv_d)?.broadcast_axis(1, d)?;
    let centered = x.sub(&mean)?;
    let var = centered.mul(&centered)?.sum_axis(1)?.scale(inv_d)?;
    let inv_std = var.add_scalar(eps)?.powf(-0.5)?.broadcast_axis(1, d)?;
    let normed = centered.mul(&inv_std)?;
    normed.mul(&gamma.broadcast_axis(0, n)?)?.add(&beta.broadcast_axis(0, n)?)
}

/// Multi-head scaled dot-product attention without projections.
///
/// `q [n, d]`, `k [m, d]`, `v [m, d]`; `mask` is an optional additive
/// `[n, m]` bias shared by all heads.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let (n, d) = (q.shape()[0], q.shape()[1]);
    let m = k.shape()[0];
    if q.rank() != 2 || k.shape() != v.shape() || k.shape()[1] != d {
        return shape_err("attention", &[q.shape(), k.shape(), v.shape()]);
    }
    if heads == 0 || d % heads != 0 {
        return arg_err("attention", format!("width {d} not divisible by {heads} heads"));
    }
    let dh = d / heads;
    let qh = q.reshape(&[n, heads, dh])?.permute(&[1, 0, 2])?;
    let kt = k.reshape(&[m, heads, dh])?.permute(&[1, 2, 0])?;
    let vh = v.reshape(&[m, heads, dh])?.permute(&[1, 0, 2])?;
    let mut scores = qh.matmul(&kt)?.scale(1.0 / (dh as f64).sqrt())?;
    if let Some(mask) = mask {
        if mask.shape() != [n, m] {
            return shape_err("attention", &[mask.shape(), &[n, m]]);
        }
        scores = scores.add(&mask.broadcast_axis(0, heads)?)?;
    }
    let att = scores.softmax()?;
    att.matmul(&vh)?.permute(&[1, 0, 2])?.reshape(&[n, d])
}

/// Additive mask forbidding attention from position `i` to any `j > i`.
pub fn causal_mask(n: usize) -> Tensor {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            data[i * n + j] = -1e9;
        }
    }
    Tensor::constant(data, &[n, n]).expect("square mask")
}
