//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Ops on tensors linked to a [`Graph`] are appended to it; [`grad`] walks the
//! tape backwards. Passing `create_graph = true` records the backward pass
//! itself, so gradients of gradients are available (needed when an outer
//! objective differentiates through an inner gradient step).
//!
//! ```
//! use autograd::{grad, Graph, Tensor};
//!
//! let g = Graph::new();
//! let x = Tensor::leaf(&g, vec![2.0], &[], true).unwrap();
//! let y = x.mul(&x).unwrap().mul(&x).unwrap(); // x^3
//! let dy = grad(&y, &[&x], true).unwrap().remove(0);
//! let d2y = grad(&dy, &[&x], false).unwrap().remove(0);
//! assert_eq!(dy.item(), 12.0);
//! assert_eq!(d2y.item(), 12.0);
//! ```
//!
//! Broadcasting is deliberately absent apart from scalar expansion; use
//! [`Tensor::broadcast_axis`] explicitly.

mod backward;
pub mod check;
mod error;
mod graph;
pub mod kernels;
pub mod nn;
mod op;
mod tensor;

pub use backward::{grad, grad_allow_unused};
pub use error::{AutogradError, Result};
pub use graph::Graph;
pub use tensor::Tensor;
