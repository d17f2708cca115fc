//! Saliency images as binary PGM (P5): one grayscale pane of |g| per sample,
//! rescaled so the strongest pixel is 255, plus an input|saliency pair file.
//!
//! Multi-channel inputs collapse to a channel-max pane — for the colour-coded
//! digits this recovers the grayscale original, because every palette colour
//! has a full-intensity channel.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::engine::{saliency, EngineError, SalMode};
use crate::nn::{Network, NnError};
use crate::real::Real;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<X> = std::result::Result<X, ExportError>;

/// Binary PGM: `P5`, dimensions, maxval 255, then one byte per pixel.
pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Channel-max of one sample, as h*w values.
fn channel_max<T: Real>(sample: &[T], c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![f64::NEG_INFINITY; hw];
    for ch in 0..c {
        for (o, &v) in out.iter_mut().zip(&sample[ch * hw..(ch + 1) * hw]) {
            *o = o.max(v.to_f64());
        }
    }
    out
}

/// Rescales nonnegative values so the maximum maps to 255; all-zero input
/// stays all black.
fn to_gray(vals: &[f64]) -> Vec<u8> {
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return vec![0; vals.len()];
    }
    vals.iter()
        .map(|&v| ((v / max * 255.0).round().clamp(0.0, 255.0)) as u8)
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Exports one saliency pane and one input|saliency pair per sample into
/// `out_dir`, named `{index:04}_y{label}_p{pred}.pgm` and `..._pair.pgm`.
/// Returns the written paths in sample order.
pub fn export_saliency_images<T: Real>(
    net: &Network<T>,
    batch: &Tensor<T>,
    labels: &[u32],
    mode: &SalMode,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let shape = batch.shape().to_vec();
    if shape.len() != 4 {
        return Err(ExportError::Invalid(format!(
            "saliency export wants [b, c, h, w] image batches, got {shape:?}"
        )));
    }
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if labels.len() != b {
        return Err(ExportError::Invalid(format!(
            "{} labels for {b} samples",
            labels.len()
        )));
    }
    let sal = saliency(net, batch, mode, crate::autodiff::Retain::No)?;
    if sal.shape() != batch.shape() {
        return Err(ExportError::Invalid(format!(
            "saliency shape {:?} is not image-shaped; use input-mode saliency",
            sal.shape()
        )));
    }
    let preds = net.predict(batch, 256)?;
    fs::create_dir_all(out_dir).map_err(|source| ExportError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let hw = h * w;
    let sample = c * hw;
    let mut written = Vec::with_capacity(2 * b);
    for i in 0..b {
        let g_abs: Vec<f64> = sal.data()[i * sample..(i + 1) * sample]
            .iter()
            .map(|&v| v.to_f64().abs())
            .collect();
        let sal_pane = to_gray(&channel_max(&g_abs, c, hw));
        let input_pane = to_gray(&channel_max(
            &batch.data()[i * sample..(i + 1) * sample],
            c,
            hw,
        ));

        let stem = format!("{i:04}_y{}_p{}", labels[i], preds[i]);
        let single = out_dir.join(format!("{stem}.pgm"));
        write_file(&single, &pgm_bytes(w, h, &sal_pane))?;

        // Pair pane: input on the left, saliency on the right, one white
        // separator column.
        let pw = 2 * w + 1;
        let mut pair = vec![0u8; pw * h];
        for row in 0..h {
            pair[row * pw..row * pw + w].copy_from_slice(&input_pane[row * w..(row + 1) * w]);
            pair[row * pw + w] = 255;
            pair[row * pw + w + 1..(row + 1) * pw]
                .copy_from_slice(&sal_pane[row * w..(row + 1) * w]);
        }
        let paired = out_dir.join(format!("{stem}_pair.pgm"));
        write_file(&paired, &pgm_bytes(pw, h, &pair))?;
        written.push(single);
        written.push(paired);
    }
    Ok(written)
}
