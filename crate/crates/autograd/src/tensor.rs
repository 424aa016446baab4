use std::fmt;
use std::rc::Rc;

use crate::error::{arg_err, AutogradError, Result};
use crate::graph::{Graph, Node, NodeInput, Value};
use crate::kernels::numel;
use crate::op::Op;

#[derive(Clone)]
pub(crate) struct NodeRef {
    pub graph: Graph,
    pub id: usize,
    pub generation: u64,
}

/// Dense row-major `f64` tensor, optionally linked to a node of a [`Graph`].
///
/// A tensor without a node is a constant: ops on constants are evaluated
/// eagerly and never recorded.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) value: Value,
    pub(crate) node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.data())
            .finish()
    }
}

impl Tensor {
    pub fn constant(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(AutogradError::ShapeMismatch {
                op: "constant",
                shapes: vec![shape.to_vec(), vec![data.len()]],
            });
        }
        Ok(Tensor { value: Value { data: Rc::new(data), shape: shape.into() }, node: None })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { value: Value { data: Rc::new(vec![v]), shape: Rc::from([]) }, node: None }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::constant(vec![0.0; numel(shape)], shape).expect("consistent shape")
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        Tensor::constant(vec![v; numel(shape)], shape).expect("consistent shape")
    }

    /// Registers a leaf on `graph`. With `requires_grad == false` this is the
    /// same as [`Tensor::constant`].
    pub fn leaf(graph: &Graph, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        let t = Tensor::constant(data, shape)?;
        if !requires_grad {
            return Ok(t);
        }
        let id = graph.push(Node { op: Op::Leaf, inputs: vec![], out: t.value.clone() });
        Ok(Tensor { value: t.value, node: Some(NodeRef { graph: graph.clone(), id, generation: graph.generation() }) })
    }

    pub fn shape(&self) -> &[usize] {
        &self.value.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.value.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value.data.to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value.data.len()
    }

    pub fn rank(&self) -> usize {
        self.value.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.value.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn graph(&self) -> Option<&Graph> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same values, no graph linkage.
    pub fn detach(&self) -> Tensor {
        Tensor { value: self.value.clone(), node: None }
    }

    pub(crate) fn apply(op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
        let name = op.name();
        let values: Vec<&Value> = inputs.iter().map(|t| &t.value).collect();
        let (data, shape) = op.forward(&values)?;

        let mut graph: Option<&Graph> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                if n.generation != n.graph.generation() {
                    return Err(AutogradError::GraphMismatch { op: name });
                }
                match graph {
                    None => graph = Some(&n.graph),
                    Some(g) if !g.same(&n.graph) => return Err(AutogradError::GraphMismatch { op: name }),
                    _ => {}
                }
            }
        }
        let value = Value { data: Rc::new(data), shape: shape.into() };
        let Some(graph) = graph else {
            return Ok(Tensor { value, node: None });
        };
        if graph.is_checked() && value.data.iter().any(|v| !v.is_finite()) {
            return Err(AutogradError::NonFinite { op: name });
        }
        let node_inputs = inputs.iter().map(|t| NodeInput { node: t.node_id(), value: t.value.clone() }).collect();
        let id = graph.push(Node { op, inputs: node_inputs, out: value.clone() });
        Ok(Tensor { value, node: Some(NodeRef { graph: graph.clone(), id, generation: graph.generation() }) })
    }

    pub(crate) fn apply_unary(&self, op: Op) -> Result<Tensor> {
        Tensor::apply(op, &[self])
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::apply(Op::Add, &[self, other])
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::apply(Op::Sub, &[self, other])
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::apply(Op::Mul, &[self, other])
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.mul(&other.powf(-1.0)?)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.apply_unary(Op::Scale(c))
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.apply_unary(Op::AddScalar(c))
    }

    /// Multiplies every element by the scalar tensor `s` (the only broadcast allowed).
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        if s.rank() != 0 {
            return arg_err("mul_scalar_tensor", format!("expected a scalar, got shape {:?}", s.shape()));
        }
        self.mul(&s.expand_scalar(self.shape())?)
    }

    /// `[m, k] x [k, n]` or batched `[b, m, k] x [b, k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::apply(Op::MatMul, &[self, other])
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.apply_unary(Op::Relu)
    }

    pub fn gelu(&self) -> Result<Tensor> {
        self.apply_unary(Op::Gelu(0))
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.apply_unary(Op::Sigmoid)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.apply_unary(Op::Exp)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.apply_unary(Op::Log)
    }

    pub fn powf(&self, p: f64) -> Result<Tensor> {
        self.apply_unary(Op::Powf(p))
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.apply_unary(Op::Softplus)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        self.apply_unary(Op::Clamp(lo, hi))
    }

    pub fn softmax(&self) -> Result<Tensor> {
        self.apply_unary(Op::Softmax)
    }

    pub fn log_softmax(&self) -> Result<Tensor> {
        self.apply_unary(Op::LogSoftmax)
    }

    pub fn sum(&self) -> Result<Tensor> {
        self.apply_unary(Op::SumAll)
    }

    pub fn mean(&self) -> Result<Tensor> {
        let n = self.numel() as f64;
        self.sum()?.scale(1.0 / n)
    }

    pub fn expand_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        self.apply_unary(Op::ExpandScalar(shape.into()))
    }

    /// Sums out `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.apply_unary(Op::SumAxis(axis))
    }

    /// Inserts a new axis of length `n` at position `axis` by repetition.
    pub fn broadcast_axis(&self, axis: usize, n: usize) -> Result<Tensor> {
        self.apply_unary(Op::BroadcastAxis(axis, n))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        self.apply_unary(Op::Reshape(shape.into()))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        self.apply_unary(Op::Permute(axes.into()))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Result<Tensor> {
        let r = self.rank();
        if r < 2 {
            return arg_err("transpose", format!("rank {r} < 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        if parts.is_empty() {
            return arg_err("concat", "no inputs");
        }
        Tensor::apply(Op::Concat(axis), parts)
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.apply_unary(Op::Slice { axis, start, len })
    }

    /// Zero-pads along `axis` so that `self` occupies `start..start+len` of `total`.
    pub fn pad(&self, axis: usize, start: usize, total: usize) -> Result<Tensor> {
        self.apply_unary(Op::Pad { axis, start, total })
    }

    /// Selects rows (axis 0) by index. Used for embedding lookup.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        self.apply_unary(Op::GatherRows(idx.into()))
    }

    /// Adjoint of [`Tensor::gather_rows`]: scatter-adds rows into `rows` zero rows.
    pub fn scatter_rows(&self, idx: &[usize], rows: usize) -> Result<Tensor> {
        self.apply_unary(Op::ScatterRows(idx.into(), rows))
    }

    /// im2col for a padded 3x3 kernel: `[C, H, W] -> [C*9, Ho*Wo]`.
    pub fn unfold3x3(&self, stride: usize) -> Result<Tensor> {
        self.apply_unary(Op::Unfold3x3(stride))
    }

    pub fn upsample2(&self) -> Result<Tensor> {
        self.apply_unary(Op::Upsample2)
    }

    pub fn sumpool2(&self) -> Result<Tensor> {
        self.apply_unary(Op::SumPool2)
    }
}
