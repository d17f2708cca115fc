//! Layers, parameter store, initialisation, optimisers and checkpoints.
//!
//! A [`Network`] owns its parameters; the graph is rebuilt per batch.  To get
//! parameter gradients, bind the network onto a graph first — frozen
//! parameters stay constants and cost nothing in the backward pass.

mod checkpoint;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use network::{BoundParams, ForwardPass, Layer, Network, Param};
pub use optim::{GradMap, OptimSpec, Optimizer};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("no parameter named {0}")]
    UnknownParam(String),
    #[error("no layer tagged {0}")]
    UnknownTag(String),
    #[error("parameter {name}: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("missing gradient for trainable parameter {0}")]
    MissingGrad(String),
    #[error("input shape {got:?} does not match network input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bad network structure: {0}")]
    Structure(String),
    #[error("dropout in train mode needs an rng")]
    DropoutNeedsRng,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<V> = std::result::Result<V, NnError>;
