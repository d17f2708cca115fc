//! Group-shift evaluation: per-group accuracy, the unweighted group average,
//! and worst-group accuracy (WGA).
//!
//! A group is a (label, attribute) pair, indexed `label * n_attrs + attr` to
//! match [`GroupedDataset::group_of`].  The average is the plain mean over
//! groups, not over samples; on a balanced split the two coincide.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, GroupedDataset};
use crate::nn::{Network, NnError};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("group (label {label}, attr {attr}) has no samples")]
    EmptyGroup { label: u32, attr: u32 },
    #[error("{got} predictions for {expected} samples")]
    LengthMismatch { expected: usize, got: usize },
    #[error("{what} {value} outside domain of size {limit}")]
    OutOfRange {
        what: &'static str,
        value: u32,
        limit: u32,
    },
    #[error("empty group domain ({n_classes} classes x {n_attrs} attrs)")]
    EmptyDomain { n_classes: u32, n_attrs: u32 },
}

pub type Result<X> = std::result::Result<X, MetricsError>;

/// Per-group accuracies plus the two scalar summaries derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// Accuracy of group `label * n_attrs + attr`, each in [0, 1].
    pub per_group: Vec<f64>,
    /// Sample count per group, same indexing; every entry nonzero.
    pub counts: Vec<usize>,
    /// Unweighted mean of `per_group`.
    pub average: f64,
    /// Minimum of `per_group`.
    pub wga: f64,
}

impl GroupMetrics {
    /// Sample-weighted accuracy, for reporting plain test accuracy on splits
    /// that are not group-balanced.
    pub fn overall(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        let correct: f64 = self
            .per_group
            .iter()
            .zip(&self.counts)
            .map(|(&acc, &n)| acc * n as f64)
            .sum();
        correct / total as f64
    }
}

/// Counts correct predictions within each (label, attr) group.  Predictions
/// are compared by value; anything that is not the true label is simply
/// wrong, so out-of-domain predictions score zero rather than erroring.
pub fn metrics_from_predictions(
    preds: &[usize],
    labels: &[u32],
    attrs: &[u32],
    n_classes: u32,
    n_attrs: u32,
) -> Result<GroupMetrics> {
    if n_classes == 0 || n_attrs == 0 {
        return Err(MetricsError::EmptyDomain { n_classes, n_attrs });
    }
    if preds.len() != labels.len() || labels.len() != attrs.len() {
        return Err(MetricsError::LengthMismatch {
            expected: labels.len().min(attrs.len()),
            got: preds.len(),
        });
    }
    let n_groups = (n_classes * n_attrs) as usize;
    let mut counts = vec![0usize; n_groups];
    let mut correct = vec![0usize; n_groups];
    for ((&p, &y), &a) in preds.iter().zip(labels).zip(attrs) {
        if y >= n_classes {
            return Err(MetricsError::OutOfRange {
                what: "label",
                value: y,
                limit: n_classes,
            });
        }
        if a >= n_attrs {
            return Err(MetricsError::OutOfRange {
                what: "attr",
                value: a,
                limit: n_attrs,
            });
        }
        let g = (y * n_attrs + a) as usize;
        counts[g] += 1;
        if p == y as usize {
            correct[g] += 1;
        }
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(MetricsError::EmptyGroup {
            label: g as u32 / n_attrs,
            attr: g as u32 % n_attrs,
        });
    }
    let per_group: Vec<f64> = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| c as f64 / n as f64)
        .collect();
    let average = per_group.iter().sum::<f64>() / n_groups as f64;
    let wga = per_group.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(GroupMetrics {
        per_group,
        counts,
        average,
        wga,
    })
}

/// Runs the network over the whole dataset in eval mode and scores it per
/// group.  Chunking is a memory knob only: rows are independent in every
/// layer, so predictions do not depend on the chunk size.
pub fn evaluate_groups<T: Real>(
    net: &Network<T>,
    data: &GroupedDataset<T>,
) -> Result<GroupMetrics> {
    let preds = net.predict(data.inputs(), 256)?;
    metrics_from_predictions(
        &preds,
        data.labels(),
        data.attrs(),
        data.n_classes(),
        data.n_attrs(),
    )
}
