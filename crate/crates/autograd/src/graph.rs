//! Append-only computation tape.
//!
//! Nodes only hold values and input ids, never `Tensor` handles, so a graph
//! and its tensors do not form reference cycles. Append order is a valid
//! topological order, which is what the reverse sweep in [`crate::grad`]
//! relies on.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use crate::op::Op;

#[derive(Clone, Debug)]
pub(crate) struct Value {
    pub data: Rc<Vec<f64>>,
    pub shape: Rc<[usize]>,
}

#[derive(Clone, Debug)]
pub(crate) struct NodeInput {
    pub node: Option<usize>,
    pub value: Value,
}

#[derive(Clone, Debug)]
pub(crate) struct Node {
    pub op: Op,
    pub inputs: Vec<NodeInput>,
    pub out: Value,
}

#[derive(Debug, Default)]
pub(crate) struct GraphInner {
    pub nodes: RefCell<Vec<Node>>,
    pub generation: Cell<u64>,
    pub checked: Cell<bool>,
}

/// A recording tape. Cheap to clone (shared handle).
#[derive(Clone, Debug, Default)]
pub struct Graph {
    pub(crate) inner: Rc<GraphInner>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that rejects NaN/Inf in every recorded op output.
    pub fn checked() -> Self {
        let g = Self::default();
        g.inner.checked.set(true);
        g
    }

    pub fn set_checked(&self, on: bool) {
        self.inner.checked.set(on);
    }

    pub fn is_checked(&self) -> bool {
        self.inner.checked.get()
    }

    pub fn len(&self) -> usize {
        self.inner.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Frees every recorded node. Tensors recorded before the reset become
    /// stale and are rejected by later ops.
    pub fn reset(&self) {
        self.inner.nodes.borrow_mut().clear();
        self.inner.generation.set(self.inner.generation.get() + 1);
    }

    pub(crate) fn generation(&self) -> u64 {
        self.inner.generation.get()
    }

    pub(crate) fn push(&self, node: Node) -> usize {
        let mut nodes = self.inner.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub(crate) fn node(&self, id: usize) -> Node {
        self.inner.nodes.borrow()[id].clone()
    }

    pub(crate) fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}
