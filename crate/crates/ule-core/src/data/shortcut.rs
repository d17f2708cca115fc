//! Shortcut-planted variants of a grayscale digit dataset.

use super::{DataError, GroupedDataset, Result};
use crate::autodiff::Tensor;
use crate::real::Real;

fn require_mnist_shaped<T: Real>(base: &GroupedDataset<T>) -> Result<()> {
    if base.sample_shape() != [1, 28, 28] {
        return Err(DataError::NotMnistShaped(base.sample_shape().to_vec()));
    }
    if base.n_classes() != 10 || base.n_attrs() != 1 {
        return Err(DataError::Invalid(format!(
            "base must be plain 10-class digits, got {} classes x {} attrs",
            base.n_classes(),
            base.n_attrs()
        )));
    }
    Ok(())
}

/// Plants a one-hot label patch in the top-left corner: pixel (0, c) of a
/// class-c image is set to full intensity.  The attribute mirrors the class,
/// so the planted feature *is* the attribute.
pub fn make_mnist_sc<T: Real>(base: &GroupedDataset<T>) -> Result<GroupedDataset<T>> {
    require_mnist_shaped(base)?;
    let mut inputs = base.inputs().detach();
    {
        let data = inputs.make_mut();
        for (i, &y) in base.labels().iter().enumerate() {
            data[i * 784 + y as usize] = T::one();
        }
    }
    GroupedDataset::new(
        inputs,
        base.labels().to_vec(),
        base.labels().to_vec(),
        10,
        10,
    )
}

/// Ten distinguishable colours, every one with a full-intensity channel so a
/// channel-max over a coloured digit recovers the grayscale original.
pub const COLOR_PALETTE: [[f64; 3]; 10] = [
    [1.0, 0.0, 0.0], // red
    [0.0, 1.0, 0.0], // green
    [0.0, 0.0, 1.0], // blue
    [1.0, 1.0, 0.0], // yellow
    [1.0, 0.0, 1.0], // magenta
    [0.0, 1.0, 1.0], // cyan
    [1.0, 0.5, 0.0], // orange
    [0.5, 1.0, 0.0], // spring green
    [0.5, 0.0, 1.0], // violet
    [0.0, 0.5, 1.0], // azure
];

/// Colours every digit by its class: foreground intensity v becomes
/// v * palette[class] across the three channels.
pub fn make_colored_mnist<T: Real>(
    base: &GroupedDataset<T>,
    palette: &[[f64; 3]; 10],
) -> Result<GroupedDataset<T>> {
    require_mnist_shaped(base)?;
    for (i, c) in palette.iter().enumerate() {
        let max = c.iter().cloned().fold(f64::MIN, f64::max);
        if (max - 1.0).abs() > 1e-12 {
            return Err(DataError::BadPalette(format!(
                "colour {i} has max channel {max}, needs a full-intensity channel"
            )));
        }
        if c.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(DataError::BadPalette(format!(
                "colour {i} has channels outside [0,1]"
            )));
        }
        for (j, d) in palette.iter().enumerate().skip(i + 1) {
            if c == d {
                return Err(DataError::BadPalette(format!(
                    "colours {i} and {j} are identical"
                )));
            }
        }
    }
    let n = base.len();
    let plane = 784usize;
    let mut data = vec![T::zero(); n * 3 * plane];
    for i in 0..n {
        let colour = &palette[base.labels()[i] as usize];
        let src = &base.inputs().data()[i * plane..(i + 1) * plane];
        for (k, &ck) in colour.iter().enumerate() {
            let ck = T::from_f64(ck);
            let dst = &mut data[(i * 3 + k) * plane..(i * 3 + k + 1) * plane];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s * ck;
            }
        }
    }
    GroupedDataset::new(
        Tensor::from_vec(vec![n, 3, 28, 28], data)?,
        base.labels().to_vec(),
        base.labels().to_vec(),
        10,
        10,
    )
}
