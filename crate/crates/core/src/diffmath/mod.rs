//! Dense linear algebra with reverse-mode differentiation and Adam.
//!
//! Everything is `f64`, row-major and single-threaded. A [`Graph`] records
//! one forward evaluation; [`evaluate_and_backprop`] returns gradients for
//! every trainable parameter the loss depends on.

mod adam;
pub mod check;
mod graph;
mod nn;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, NodeId, ParamId, ParamStore};
pub use nn::{Activation, Init, Linear, Mlp};
pub use tensor::{matmul_t, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("loss node {node} is not scalar (shape {shape:?})")]
    NonScalarLoss { node: usize, shape: (usize, usize) },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: usize },
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { context: String, expected: (usize, usize), found: (usize, usize) },
    #[error("parameter {name} is frozen and cannot be updated")]
    FrozenParameter { name: String },
    #[error("gradient refers to unknown parameter #{index}")]
    UnknownParameter { index: usize },
}

/// Operators with forward and adjoint rules on [`Graph`].
pub const SUPPORTED_OPS: &[&str] = &[
    "matmul_t",
    "add_bias",
    "tanh",
    "relu",
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "mse",
    "softmax_ce",
    "row_norm",
    "row_dot",
    "row_cosine",
    "cosine_matrix",
    "log",
    "clamp",
    "transpose",
    "slice_cols",
    "concat_cols",
    "mean",
    "sum",
];

pub fn supported_ops() -> &'static [&'static str] {
    SUPPORTED_OPS
}

/// Backward pass from `loss`, after checking that the forward pass up to it
/// stayed finite.
pub fn evaluate_and_backprop(graph: &Graph, loss: NodeId) -> Result<Gradients, DiffError> {
    graph.backward(loss)
}
