//! IDX image/label files (the MNIST distribution format).
//! Big-endian magic: 0x00000803 for u8 image cubes, 0x00000801 for labels.

use std::path::Path;

use super::{DataError, GroupedDataset, Result};
use crate::autodiff::Tensor;
use crate::real::Real;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let Some(s) = bytes.get(at..at + 4) else {
        return Err(DataError::Truncated {
            needed: at + 4,
            got: bytes.len(),
        });
    };
    Ok(u32::from_be_bytes(s.try_into().unwrap()))
}

/// Raw pixels plus (count, rows, cols).
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<u8>, usize, usize, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            expected: IMAGE_MAGIC,
            got: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let needed = 16 + n * rows * cols;
    if bytes.len() != needed {
        return Err(DataError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok((bytes[16..].to_vec(), n, rows, cols))
}

/// Raw labels plus count.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<(Vec<u8>, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            expected: LABEL_MAGIC,
            got: magic,
        });
    }
    let n = be_u32(bytes, 4)? as usize;
    let needed = 8 + n;
    if bytes.len() != needed {
        return Err(DataError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok((bytes[8..].to_vec(), n))
}

/// Builds a grayscale digit dataset from an images/labels pair.  Pixels are
/// scaled to [0,1] with byte 255 mapping to exactly 1.0; the attribute
/// domain is the trivial singleton.
pub fn dataset_from_idx<T: Real>(images: &[u8], labels_file: &[u8]) -> Result<GroupedDataset<T>> {
    let (pixels, n, rows, cols) = parse_idx_images(images)?;
    let (labels, m) = parse_idx_labels(labels_file)?;
    if n != m {
        return Err(DataError::CountMismatch {
            images: n,
            labels: m,
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(DataError::Invalid(format!("digit label {bad} > 9")));
    }
    let scale = 1.0 / 255.0;
    let data: Vec<T> = pixels
        .iter()
        .map(|&p| {
            if p == 255 {
                T::one()
            } else {
                T::from_f64(p as f64 * scale)
            }
        })
        .collect();
    GroupedDataset::new(
        Tensor::from_vec(vec![n, 1, rows, cols], data)?,
        labels.iter().map(|&l| l as u32).collect(),
        vec![0; n],
        10,
        1,
    )
}

/// Loads `{split}-images-idx3-ubyte` / `{split}-labels-idx1-ubyte` from a
/// directory; the "test" split also accepts the canonical `t10k` stems.
pub fn load_mnist_dir<T: Real>(dir: &Path, split: &str) -> Result<GroupedDataset<T>> {
    let stems: &[&str] = if split == "test" {
        &["test", "t10k"]
    } else {
        &[split]
    };
    for stem in stems {
        let img = dir.join(format!("{stem}-images-idx3-ubyte"));
        let lbl = dir.join(format!("{stem}-labels-idx1-ubyte"));
        if img.exists() && lbl.exists() {
            return dataset_from_idx(&std::fs::read(img)?, &std::fs::read(lbl)?);
        }
    }
    Err(DataError::Io(std::io::Error::new(
        std::io::ErrorKind::NotFound,
        format!("no {split} IDX pair under {}", dir.display()),
    )))
}
