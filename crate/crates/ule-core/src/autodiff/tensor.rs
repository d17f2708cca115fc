//! Dense row-major tensors.  Data is behind an `Arc`, so clones (including
//! the copies the tape keeps of every node's value) are cheap.

use std::sync::Arc;

use super::{NodeId, Result, TensorError};
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<NodeId>,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, validating element count and finiteness.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::ShapeMismatch {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite {
                op: "from_vec",
                index,
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
            node: None,
        })
    }

    /// Scalar with shape `[]`.
    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: Arc::new(vec![v]),
            node: None,
        }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: Arc::new(vec![v; n]),
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Scalar in the loose sense used by gradient targets: one element.
    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        assert!(
            self.is_scalar(),
            "item() on tensor of shape {:?}",
            self.shape
        );
        self.data[0]
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    /// Same values, detached from any graph.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    /// Cheap handle to the same storage under a node id.
    pub(super) fn with_node(&self, node: NodeId) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: Some(node),
        }
    }

    /// Mutable access for builders that fill tensors in place before any
    /// graph sees them (dataset construction, parameter updates).
    pub fn make_mut(&mut self) -> &mut [T] {
        self.node = None;
        let v: &mut Vec<T> = Arc::make_mut(&mut self.data);
        v.as_mut_slice()
    }

    /// Raw constructor for kernel outputs; callers guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    /// Index of the first non-finite element, if any.
    pub(super) fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}
