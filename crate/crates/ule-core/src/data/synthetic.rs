//! Synthetic two-class group-shift data: informative core features with
//! overlap, plus a cleaner spurious block aligned with the attribute.  With
//! high train correlation, empirical risk minimisation prefers the spurious
//! block and collapses on the groups where attribute and class disagree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, GroupedDataset, Result};
use crate::autodiff::Tensor;
use crate::real::Real;
use crate::seeds;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub n_train: usize,
    /// Balanced test size; must be divisible by the four groups.
    pub n_test: usize,
    pub d_core: usize,
    pub d_spur: usize,
    /// P(attribute == class) in the training split.
    pub rho: f64,
    pub mu_core: f64,
    pub sigma_core: f64,
    pub mu_spur: f64,
    pub sigma_spur: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_test: 400,
            d_core: 5,
            d_spur: 5,
            rho: 0.95,
            mu_core: 1.0,
            sigma_core: 2.0,
            mu_spur: 1.0,
            sigma_spur: 0.3,
            seed: 0,
        }
    }
}

/// Box-Muller with a fixed two-draws-per-value budget, so the draw count is
/// a pure function of the sample count.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample<T: Real>(spec: &SyntheticSpec, y: u32, a: u32, rng: &mut ChaCha8Rng) -> Vec<T> {
    let sy = if y == 1 { 1.0 } else { -1.0 };
    let sa = if a == 1 { 1.0 } else { -1.0 };
    let mut v = Vec::with_capacity(spec.d_core + spec.d_spur);
    for _ in 0..spec.d_core {
        v.push(T::from_f64(spec.mu_core * sy + spec.sigma_core * normal(rng)));
    }
    for _ in 0..spec.d_spur {
        v.push(T::from_f64(spec.mu_spur * sa + spec.sigma_spur * normal(rng)));
    }
    v
}

/// Returns (train, balanced test).  Train draws (y, a) with the requested
/// correlation; the test split has exactly n_test/4 samples per group.
pub fn make_synthetic<T: Real>(
    spec: &SyntheticSpec,
) -> Result<(GroupedDataset<T>, GroupedDataset<T>)> {
    if !(0.0..=1.0).contains(&spec.rho) {
        return Err(DataError::Invalid(format!(
            "rho {} outside [0,1]",
            spec.rho
        )));
    }
    if spec.n_train == 0 || spec.n_test == 0 || spec.n_test % 4 != 0 {
        return Err(DataError::Invalid(format!(
            "need n_train > 0 and n_test divisible by 4, got {} / {}",
            spec.n_train, spec.n_test
        )));
    }
    if spec.d_core == 0 || spec.d_spur == 0 {
        return Err(DataError::Invalid("need at least one feature per block".into()));
    }
    for (name, v) in [
        ("mu_core", spec.mu_core),
        ("sigma_core", spec.sigma_core),
        ("mu_spur", spec.mu_spur),
        ("sigma_spur", spec.sigma_spur),
    ] {
        if !v.is_finite() || (name.starts_with("sigma") && v <= 0.0) {
            return Err(DataError::Invalid(format!("bad {name}: {v}")));
        }
    }

    let d = spec.d_core + spec.d_spur;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, &[seeds::STREAM_SYNTH]));

    let mut train_data = Vec::with_capacity(spec.n_train * d);
    let mut train_y = Vec::with_capacity(spec.n_train);
    let mut train_a = Vec::with_capacity(spec.n_train);
    for _ in 0..spec.n_train {
        let y: u32 = rng.gen_range(0..2);
        let a = if rng.gen::<f64>() < spec.rho { y } else { 1 - y };
        train_data.extend(sample::<T>(spec, y, a, &mut rng));
        train_y.push(y);
        train_a.push(a);
    }
    let train = GroupedDataset::new(
        Tensor::from_vec(vec![spec.n_train, d], train_data)?,
        train_y,
        train_a,
        2,
        2,
    )?;

    let per_group = spec.n_test / 4;
    let mut test_data = Vec::with_capacity(spec.n_test * d);
    let mut test_y = Vec::with_capacity(spec.n_test);
    let mut test_a = Vec::with_capacity(spec.n_test);
    for y in 0..2u32 {
        for a in 0..2u32 {
            for _ in 0..per_group {
                test_data.extend(sample::<T>(spec, y, a, &mut rng));
                test_y.push(y);
                test_a.push(a);
            }
        }
    }
    let test = GroupedDataset::new(
        Tensor::from_vec(vec![spec.n_test, d], test_data)?,
        test_y,
        test_a,
        2,
        2,
    )?;
    Ok((train, test))
}
