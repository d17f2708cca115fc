//! Training two classifiers in lockstep so that the teacher is pushed away
//! from the input features the student relies on.
//!
//! The student is trained normally with cross-entropy.  The teacher minimises
//! a blend of cross-entropy and a saliency-inversion term: the gradient of its
//! own predicted score with respect to the input is driven towards the
//! *negated* saliency of the student.  When the student latches onto a
//! shortcut feature, the inversion term pushes the teacher off that feature.
//!
//! Layout:
//! - [`autodiff`]: reverse-mode tape with differentiable backward passes
//!   (needed because the saliency term differentiates a gradient).
//! - [`nn`]: layers, parameter store, init, optimizers, checkpoints.
//! - [`data`]: group-labelled datasets, shortcut variants, IDX parsing.
//! - [`engine`]: saliency extraction, inversion loss, training loops.
//! - [`metrics`], [`sweep`], [`records`], [`config`], [`export`]: evaluation
//!   and experiment plumbing.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod engine;
pub mod export;
pub mod metrics;
pub mod nn;
pub mod real;
pub mod seeds;
pub mod records;
pub mod sweep;

pub use real::Real;
