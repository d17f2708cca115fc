//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! The backward pass is itself expressed through the same op builders, so
//! with [`Retain::Yes`] the returned gradients live on the tape and can be
//! differentiated again.  That second derivative is what the saliency
//! inversion loss needs: the teacher's parameter update differentiates a
//! loss built from an input gradient.

mod graph;
mod kernels;
mod ops;
mod tensor;

pub use graph::{Graph, NodeId, Retain};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors from tensor construction and graph operations.
///
/// Every op validates shapes and scans its output for non-finite values, so a
/// NaN is reported where it is produced instead of surfacing as a corrupted
/// metric later.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: operand shapes {lhs:?} and {rhs:?} are incompatible")]
    IncompatibleShapes {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadOperand {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{what} is not attached to this graph")]
    NotOnGraph { what: &'static str },
    #[error("gradient target must be a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;
