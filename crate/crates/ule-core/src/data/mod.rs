//! Datasets with a class label and a spurious-attribute label per sample.
//!
//! Group identity is `label * n_attrs + attr`.  The shortcut variants plant a
//! feature that is perfectly predictive in training (a one-hot corner patch,
//! a class-correlated colour) so that evaluation on the clean base set
//! measures how much a model leaned on it.

mod container;
mod grouped;
mod idx;
mod shortcut;
mod synthetic;

pub use container::{export_dataset, import_dataset};
pub use grouped::{BatchStream, GroupedDataset};
pub use idx::{dataset_from_idx, load_mnist_dir, parse_idx_images, parse_idx_labels};
pub use shortcut::{make_colored_mnist, make_mnist_sc, COLOR_PALETTE};
pub use synthetic::{make_synthetic, SyntheticSpec};

use thiserror::Error;

use crate::autodiff::TensorError;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic 0x{got:08x}, expected 0x{expected:08x}")]
    BadMagic { expected: u32, got: u32 },
    #[error("truncated file: needed {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset is inconsistent: {0}")]
    Invalid(String),
    #[error("bad palette: {0}")]
    BadPalette(String),
    #[error("expected grayscale 28x28 digit data, got sample shape {0:?}")]
    NotMnistShaped(Vec<usize>),
    #[error("group {group} has no samples")]
    EmptyGroup { group: u32 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<V> = std::result::Result<V, DataError>;
