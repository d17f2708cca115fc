//! Core dataset container and batch scheduling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Result};
use crate::autodiff::Tensor;
use crate::real::Real;
use crate::seeds;

#[derive(Clone, Debug)]
pub struct GroupedDataset<T: Real> {
    inputs: Tensor<T>,
    labels: Vec<u32>,
    attrs: Vec<u32>,
    n_classes: u32,
    n_attrs: u32,
}

impl<T: Real> GroupedDataset<T> {
    /// Validates sizes and label ranges on construction; a dataset that
    /// exists is consistent.
    pub fn new(
        inputs: Tensor<T>,
        labels: Vec<u32>,
        attrs: Vec<u32>,
        n_classes: u32,
        n_attrs: u32,
    ) -> Result<Self> {
        if inputs.rank() < 2 {
            return Err(DataError::Invalid(format!(
                "inputs must be [n, ...sample], got {:?}",
                inputs.shape()
            )));
        }
        let n = inputs.shape()[0];
        if labels.len() != n || attrs.len() != n {
            return Err(DataError::Invalid(format!(
                "{n} inputs, {} labels, {} attrs",
                labels.len(),
                attrs.len()
            )));
        }
        if n_classes == 0 || n_attrs == 0 {
            return Err(DataError::Invalid("empty label domain".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DataError::Invalid(format!(
                "label {bad} outside 0..{n_classes}"
            )));
        }
        if let Some(&bad) = attrs.iter().find(|&&a| a >= n_attrs) {
            return Err(DataError::Invalid(format!(
                "attribute {bad} outside 0..{n_attrs}"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            attrs,
            n_classes,
            n_attrs,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn attrs(&self) -> &[u32] {
        &self.attrs
    }

    pub fn n_classes(&self) -> u32 {
        self.n_classes
    }

    pub fn n_attrs(&self) -> u32 {
        self.n_attrs
    }

    pub fn n_groups(&self) -> u32 {
        self.n_classes * self.n_attrs
    }

    pub fn group_of(&self, i: usize) -> u32 {
        self.labels[i] * self.n_attrs + self.attrs[i]
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_groups() as usize];
        for i in 0..self.len() {
            counts[self.group_of(i) as usize] += 1;
        }
        counts
    }

    /// Materialises a batch: inputs [k, ...sample] plus label/attr slices.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<u32>, Vec<u32>)> {
        let sample: usize = self.sample_shape().iter().product();
        let mut data = Vec::with_capacity(idx.len() * sample);
        let mut labels = Vec::with_capacity(idx.len());
        let mut attrs = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(DataError::Invalid(format!(
                    "index {i} outside dataset of size {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.inputs.data()[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
            attrs.push(self.attrs[i]);
        }
        let mut shape = vec![idx.len()];
        shape.extend_from_slice(self.sample_shape());
        Ok((Tensor::from_parts(shape, data), labels, attrs))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let (inputs, labels, attrs) = self.gather(idx)?;
        Self::new(inputs, labels, attrs, self.n_classes, self.n_attrs)
    }

    /// One-hot targets for a batch of labels.
    pub fn one_hot(labels: &[u32], n_classes: u32) -> Tensor<T> {
        let c = n_classes as usize;
        let mut data = vec![T::zero(); labels.len() * c];
        for (r, &y) in labels.iter().enumerate() {
            data[r * c + y as usize] = T::one();
        }
        Tensor::from_parts(vec![labels.len(), c], data)
    }

    /// Splits off an evaluation set with identical per-group counts, equal to
    /// the smallest group size.  Selection within each group is a seeded
    /// draw; returns (remainder, balanced).  Errors if any group is empty.
    /// The same samples with the attribute dimension collapsed, so groups
    /// become plain classes.  Needed to evaluate datasets whose attribute is
    /// a deterministic function of the label: there the full (label, attr)
    /// grid is mostly empty by construction.
    pub fn without_attrs(&self) -> Self {
        Self {
            inputs: self.inputs.clone(),
            labels: self.labels.clone(),
            attrs: vec![0; self.labels.len()],
            n_classes: self.n_classes,
            n_attrs: 1,
        }
    }

    pub fn balanced_test_split(&self, seed: u64) -> Result<(Self, Self)> {
        let counts = self.group_counts();
        if let Some(gid) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::EmptyGroup { group: gid as u32 });
        }
        let take = *counts.iter().min().expect("nonempty groups");
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[0x51]));
        let mut picked = vec![false; self.len()];
        for gid in 0..self.n_groups() {
            let mut members: Vec<usize> =
                (0..self.len()).filter(|&i| self.group_of(i) == gid).collect();
            members.shuffle(&mut rng);
            for &i in members.iter().take(take) {
                picked[i] = true;
            }
        }
        let eval_idx: Vec<usize> = (0..self.len()).filter(|&i| picked[i]).collect();
        let rest_idx: Vec<usize> = (0..self.len()).filter(|&i| !picked[i]).collect();
        Ok((self.subset(&rest_idx)?, self.subset(&eval_idx)?))
    }

    /// Grayscale [1,h,w] samples replicated to [3,h,w].
    pub fn to_rgb(&self) -> Result<Self> {
        let [c, h, w] = self.sample_shape() else {
            return Err(DataError::Invalid(format!(
                "to_rgb needs [c,h,w] samples, got {:?}",
                self.sample_shape()
            )));
        };
        if *c != 1 {
            return Err(DataError::Invalid(format!(
                "to_rgb needs single-channel input, got {c} channels"
            )));
        }
        let (h, w) = (*h, *w);
        let plane = h * w;
        let mut data = Vec::with_capacity(self.len() * 3 * plane);
        for i in 0..self.len() {
            let src = &self.inputs.data()[i * plane..(i + 1) * plane];
            for _ in 0..3 {
                data.extend_from_slice(src);
            }
        }
        Ok(Self {
            inputs: Tensor::from_parts(vec![self.len(), 3, h, w], data),
            labels: self.labels.clone(),
            attrs: self.attrs.clone(),
            n_classes: self.n_classes,
            n_attrs: self.n_attrs,
        })
    }
}

/// Deterministic epoch scheduler: every sample exactly once per epoch, order
/// reshuffled from (seed, epoch) so restarts replay identically.
pub struct BatchStream {
    n: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
}

impl BatchStream {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch == 0 {
            return Err(DataError::Invalid(format!(
                "batch stream over {n} samples with batch size {batch}"
            )));
        }
        Ok(Self {
            n,
            batch,
            seed,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Index batches for the next epoch; the final batch may be short.
    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.seed, &[self.epoch]));
        order.shuffle(&mut rng);
        self.epoch += 1;
        order.chunks(self.batch).map(|c| c.to_vec()).collect()
    }
}
