//! Primitive operations: forward kernels and backward rules.
//!
//! Every backward rule is written in terms of other primitives, so when the
//! reverse sweep runs with `create_graph` the produced gradients are recorded
//! and can be differentiated again. Linear ops come in adjoint pairs
//! (unfold/fold, upsample/sum-pool, slice/pad, gather/scatter, sum/broadcast)
//! which closes the rule set under repeated differentiation.

use std::rc::Rc;

use crate::error::{arg_err, shape_err, Result};
use crate::graph::Value;
use crate::kernels::{self as k, axis_split, numel};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    MatMul,
    Relu,
    Clamp(f64, f64),
    Sigmoid,
    Exp,
    Log,
    Powf(f64),
    Softplus,
    /// `order`-th derivative of GELU (0 is GELU itself).
    Gelu(usize),
    Softmax,
    LogSoftmax,
    SumAll,
    ExpandScalar(Rc<[usize]>),
    SumAxis(usize),
    BroadcastAxis(usize, usize),
    Reshape(Rc<[usize]>),
    Permute(Rc<[usize]>),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Pad {
        axis: usize,
        start: usize,
        total: usize,
    },
    GatherRows(Rc<[usize]>),
    ScatterRows(Rc<[usize]>, usize),
    Unfold3x3(usize),
    Fold3x3 {
        stride: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    Upsample2,
    SumPool2,
}

type Fwd = (Vec<f64>, Vec<usize>);

fn map(v: &Value, f: impl Fn(f64) -> f64) -> Fwd {
    (v.data.iter().map(|&x| f(x)).collect(), v.shape.to_vec())
}

fn zip(a: &Value, b: &Value, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Fwd> {
    if a.shape != b.shape {
        return shape_err(op, &[&a.shape, &b.shape]);
    }
    Ok((a.data.iter().zip(b.data.iter()).map(|(&x, &y)| f(x, y)).collect(), a.shape.to_vec()))
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return arg_err(op, format!("axis {axis} out of range for shape {shape:?}"));
    }
    Ok(())
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::MatMul => "matmul",
            Op::Relu => "relu",
            Op::Clamp(..) => "clamp",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Powf(_) => "powf",
            Op::Softplus => "softplus",
            Op::Gelu(_) => "gelu",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::SumAll => "sum",
            Op::ExpandScalar(_) => "expand_scalar",
            Op::SumAxis(_) => "sum_axis",
            Op::BroadcastAxis(..) => "broadcast_axis",
            Op::Reshape(_) => "reshape",
            Op::Permute(_) => "permute",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Pad { .. } => "pad",
            Op::GatherRows(_) => "gather_rows",
            Op::ScatterRows(..) => "scatter_rows",
            Op::Unfold3x3(_) => "unfold3x3",
            Op::Fold3x3 { .. } => "fold3x3",
            Op::Upsample2 => "upsample2",
            Op::SumPool2 => "sumpool2",
        }
    }

    pub fn forward(&self, inputs: &[&Value]) -> Result<Fwd> {
        let op = self.name();
        let x = inputs[0];
        match self {
            Op::Leaf => unreachable!("leaves are not computed"),
            Op::Add => zip(x, inputs[1], op, |a, b| a + b),
            Op::Sub => zip(x, inputs[1], op, |a, b| a - b),
            Op::Mul => zip(x, inputs[1], op, |a, b| a * b),
            Op::Scale(c) => Ok(map(x, |v| v * c)),
            Op::AddScalar(c) => Ok(map(x, |v| v + c)),
            Op::MatMul => {
                let (a, b) = (&x.shape, &inputs[1].shape);
                let ok = match (a.len(), b.len()) {
                    (2, 2) => a[1] == b[0],
                    (3, 3) => a[0] == b[0] && a[2] == b[1],
                    _ => false,
                };
                if !ok {
                    return shape_err(op, &[a, b]);
                }
                if a.len() == 2 {
                    let data = k::matmul(&x.data, &inputs[1].data, 1, a[0], a[1], b[1]);
                    Ok((data, vec![a[0], b[1]]))
                } else {
                    let data = k::matmul(&x.data, &inputs[1].data, a[0], a[1], a[2], b[2]);
                    Ok((data, vec![a[0], a[1], b[2]]))
                }
            }
            Op::Relu => Ok(map(x, |v| v.max(0.0))),
            Op::Clamp(lo, hi) => Ok(map(x, |v| v.clamp(*lo, *hi))),
            Op::Sigmoid => Ok(map(x, k::sigmoid)),
            Op::Exp => Ok(map(x, f64::exp)),
            Op::Log => Ok(map(x, f64::ln)),
            Op::Powf(p) => Ok(map(x, |v| v.powf(*p))),
            Op::Softplus => Ok(map(x, k::softplus)),
            Op::Gelu(order) => Ok((k::gelu_derivative(&x.data, *order), x.shape.to_vec())),
            Op::Softmax | Op::LogSoftmax => {
                let n = *x.shape.last().unwrap_or(&0);
                if x.shape.is_empty() || n == 0 {
                    return shape_err(op, &[&x.shape]);
                }
                let data = if matches!(self, Op::Softmax) {
                    k::softmax_last(&x.data, n)
                } else {
                    k::log_softmax_last(&x.data, n)
                };
                Ok((data, x.shape.to_vec()))
            }
            Op::SumAll => Ok((vec![x.data.iter().sum()], vec![])),
            Op::ExpandScalar(shape) => {
                if !x.shape.is_empty() {
                    return shape_err(op, &[&x.shape, shape]);
                }
                Ok((vec![x.data[0]; numel(shape)], shape.to_vec()))
            }
            Op::SumAxis(axis) => {
                check_axis(op, &x.shape, *axis)?;
                let (o, n, i) = axis_split(&x.shape, *axis);
                let mut shape = x.shape.to_vec();
                shape.remove(*axis);
                Ok((k::sum_axis(&x.data, o, n, i), shape))
            }
            Op::BroadcastAxis(axis, n) => {
                if *axis > x.shape.len() {
                    return arg_err(op, format!("axis {axis} out of range for shape {:?}", x.shape));
                }
                let outer: usize = x.shape[..*axis].iter().product();
                let inner: usize = x.shape[*axis..].iter().product();
                let mut shape = x.shape.to_vec();
                shape.insert(*axis, *n);
                Ok((k::broadcast_axis(&x.data, outer, *n, inner), shape))
            }
            Op::Reshape(shape) => {
                if numel(shape) != x.data.len() {
                    return shape_err(op, &[&x.shape, shape]);
                }
                Ok(((*x.data).clone(), shape.to_vec()))
            }
            Op::Permute(axes) => {
                let mut seen = vec![false; x.shape.len()];
                if axes.len() != x.shape.len() {
                    return arg_err(op, format!("axes {axes:?} for shape {:?}", x.shape));
                }
                for &a in axes.iter() {
                    if a >= seen.len() || seen[a] {
                        return arg_err(op, format!("axes {axes:?} is not a permutation"));
                    }
                    seen[a] = true;
                }
                Ok(k::permute(&x.data, &x.shape, axes))
            }
            Op::Concat(axis) => {
                check_axis(op, &x.shape, *axis)?;
                let mut total = 0;
                for v in inputs {
                    let same_rank = v.shape.len() == x.shape.len();
                    let compatible = same_rank
                        && v.shape.iter().zip(x.shape.iter()).enumerate().all(|(d, (a, b))| d == *axis || a == b);
                    if !compatible {
                        let shapes: Vec<&[usize]> = inputs.iter().map(|v| &*v.shape).collect();
                        return shape_err(op, &shapes);
                    }
                    total += v.shape[*axis];
                }
                let (outer, _, inner) = axis_split(&x.shape, *axis);
                let mut data = Vec::with_capacity(outer * total * inner);
                for o in 0..outer {
                    for v in inputs {
                        let n = v.shape[*axis];
                        data.extend_from_slice(&v.data[o * n * inner..(o + 1) * n * inner]);
                    }
                }
                let mut shape = x.shape.to_vec();
                shape[*axis] = total;
                Ok((data, shape))
            }
            Op::Slice { axis, start, len } => {
                check_axis(op, &x.shape, *axis)?;
                if start + len > x.shape[*axis] || *len == 0 {
                    return arg_err(op, format!("range {start}..{} on shape {:?}", start + len, x.shape));
                }
                let (o, n, i) = axis_split(&x.shape, *axis);
                let mut shape = x.shape.to_vec();
                shape[*axis] = *len;
                Ok((k::slice_axis(&x.data, o, n, i, *start, *len), shape))
            }
            Op::Pad { axis, start, total } => {
                check_axis(op, &x.shape, *axis)?;
                let len = x.shape[*axis];
                if start + len > *total {
                    return arg_err(op, format!("cannot place {len} at {start} within {total}"));
                }
                let (o, _, i) = axis_split(&x.shape, *axis);
                let mut shape = x.shape.to_vec();
                shape[*axis] = *total;
                Ok((k::pad_axis(&x.data, o, len, i, *start, *total), shape))
            }
            Op::GatherRows(idx) => {
                if x.shape.is_empty() {
                    return shape_err(op, &[&x.shape]);
                }
                let rows = x.shape[0];
                let width: usize = x.shape[1..].iter().product();
                let mut data = Vec::with_capacity(idx.len() * width);
                for &r in idx.iter() {
                    if r >= rows {
                        return arg_err(op, format!("row {r} out of range for {rows} rows"));
                    }
                    data.extend_from_slice(&x.data[r * width..(r + 1) * width]);
                }
                let mut shape = x.shape.to_vec();
                shape[0] = idx.len();
                Ok((data, shape))
            }
            Op::ScatterRows(idx, rows) => {
                if x.shape.is_empty() || x.shape[0] != idx.len() {
                    return shape_err(op, &[&x.shape]);
                }
                let width: usize = x.shape[1..].iter().product();
                let mut data = vec![0.0; rows * width];
                for (j, &r) in idx.iter().enumerate() {
                    if r >= *rows {
                        return arg_err(op, format!("row {r} out of range for {rows} rows"));
                    }
                    for c in 0..width {
                        data[r * width + c] += x.data[j * width + c];
                    }
                }
                let mut shape = x.shape.to_vec();
                shape[0] = *rows;
                Ok((data, shape))
            }
            Op::Unfold3x3(stride) => {
                if x.shape.len() != 3 || !(1..=2).contains(stride) {
                    return shape_err(op, &[&x.shape]);
                }
                let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
                let cols = k::conv_out_len(h, *stride) * k::conv_out_len(w, *stride);
                Ok((k::unfold3x3(&x.data, c, h, w, *stride), vec![c * 9, cols]))
            }
            Op::Fold3x3 { stride, c, h, w } => {
                let cols = k::conv_out_len(*h, *stride) * k::conv_out_len(*w, *stride);
                if x.shape[..] != [c * 9, cols] {
                    return shape_err(op, &[&x.shape, &[c * 9, cols]]);
                }
                Ok((k::fold3x3(&x.data, *c, *h, *w, *stride), vec![*c, *h, *w]))
            }
            Op::Upsample2 | Op::SumPool2 => {
                let r = x.shape.len();
                if r < 2 {
                    return shape_err(op, &[&x.shape]);
                }
                let (h, w) = (x.shape[r - 2], x.shape[r - 1]);
                let outer = numel(&x.shape[..r - 2]);
                let mut shape = x.shape.to_vec();
                if matches!(self, Op::Upsample2) {
                    shape[r - 2] *= 2;
                    shape[r - 1] *= 2;
                    Ok((k::upsample2(&x.data, outer, h, w), shape))
                } else {
                    if h % 2 != 0 || w % 2 != 0 {
                        return shape_err(op, &[&x.shape]);
                    }
                    shape[r - 2] /= 2;
                    shape[r - 1] /= 2;
                    Ok((k::sumpool2(&x.data, outer, h, w), shape))
                }
            }
        }
    }

    /// Gradients for each input, given upstream gradient `g`. Entries are
    /// `None` when `needs[i]` is false.
    pub fn backward(&self, xs: &[Tensor], out: &Tensor, g: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
        let x = &xs[0];
        match self {
            Op::Leaf => Ok(vec![]),
            Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
            Op::Sub => Ok(vec![Some(g.clone()), if want(1) { Some(g.neg()?) } else { None }]),
            Op::Mul => Ok(vec![
                if want(0) { Some(g.mul(&xs[1])?) } else { None },
                if want(1) { Some(g.mul(&xs[0])?) } else { None },
            ]),
            Op::Scale(c) => one(g.scale(*c)),
            Op::AddScalar(_) => Ok(vec![Some(g.clone())]),
            Op::MatMul => {
                let ga = if want(0) { Some(g.matmul(&xs[1].transpose_last()?)?) } else { None };
                let gb = if want(1) { Some(xs[0].transpose_last()?.matmul(g)?) } else { None };
                Ok(vec![ga, gb])
            }
            Op::Relu => {
                let mask: Vec<f64> = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
                one(g.mul(&Tensor::constant(mask, x.shape())?))
            }
            Op::Clamp(lo, hi) => {
                let mask: Vec<f64> = x.data().iter().map(|&v| if v >= *lo && v <= *hi { 1.0 } else { 0.0 }).collect();
                one(g.mul(&Tensor::constant(mask, x.shape())?))
            }
            Op::Sigmoid => one(g.mul(&out.mul(&out.scale(-1.0)?.add_scalar(1.0)?)?)),
            Op::Exp => one(g.mul(out)),
            Op::Log => one(g.mul(&x.powf(-1.0)?)),
            Op::Powf(p) => {
                if *p == 0.0 {
                    return one(g.scale(0.0));
                }
                one(g.mul(&x.powf(p - 1.0)?.scale(*p)?))
            }
            Op::Softplus => one(g.mul(&x.sigmoid()?)),
            Op::Gelu(order) => one(g.mul(&x.apply_unary(Op::Gelu(order + 1))?)),
            Op::Softmax => {
                let n = *x.shape().last().unwrap();
                let r = x.shape().len() - 1;
                let dot = g.mul(out)?.sum_axis(r)?.broadcast_axis(r, n)?;
                one(out.mul(&g.sub(&dot)?))
            }
            Op::LogSoftmax => {
                let n = *x.shape().last().unwrap();
                let r = x.shape().len() - 1;
                let gs = g.sum_axis(r)?.broadcast_axis(r, n)?;
                one(g.sub(&out.exp()?.mul(&gs)?))
            }
            Op::SumAll => one(g.expand_scalar(x.shape())),
            Op::ExpandScalar(_) => one(g.sum()),
            Op::SumAxis(axis) => one(g.broadcast_axis(*axis, x.shape()[*axis])),
            Op::BroadcastAxis(axis, _) => one(g.sum_axis(*axis)),
            Op::Reshape(_) => one(g.reshape(x.shape())),
            Op::Permute(axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                one(g.permute(&inv))
            }
            Op::Concat(axis) => {
                let mut start = 0;
                let mut grads = Vec::with_capacity(xs.len());
                for (i, t) in xs.iter().enumerate() {
                    let len = t.shape()[*axis];
                    grads.push(if want(i) { Some(g.slice(*axis, start, len)?) } else { None });
                    start += len;
                }
                Ok(grads)
            }
            Op::Slice { axis, start, .. } => one(g.pad(*axis, *start, x.shape()[*axis])),
            Op::Pad { axis, start, .. } => one(g.slice(*axis, *start, x.shape()[*axis])),
            Op::GatherRows(idx) => one(g.scatter_rows(idx, x.shape()[0])),
            Op::ScatterRows(idx, _) => one(g.gather_rows(idx)),
            Op::Unfold3x3(stride) => {
                let s = x.shape();
                one(g.apply_unary(Op::Fold3x3 { stride: *stride, c: s[0], h: s[1], w: s[2] }))
            }
            Op::Fold3x3 { stride, .. } => one(g.apply_unary(Op::Unfold3x3(*stride))),
            Op::Upsample2 => one(g.apply_unary(Op::SumPool2)),
            Op::SumPool2 => one(g.apply_unary(Op::Upsample2)),
        }
    }
}
