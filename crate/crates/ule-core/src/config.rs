//! Experiment configuration: a sectioned key-value file (TOML) in which every
//! hyperparameter of a run is a named key, plus the code that turns a parsed
//! config into datasets, networks and an engine configuration.
//!
//! Parse -> serialize -> parse is the identity on the parsed value; defaults
//! are filled at parse time so the serialized form is always complete.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    load_mnist_dir, make_colored_mnist, make_mnist_sc, make_synthetic, DataError,
    GroupedDataset, SyntheticSpec, COLOR_PALETTE,
};
use crate::engine::{Distance, SalMode, Scalarize, UleConfig};
use crate::nn::{Network, NnError, OptimSpec};
use crate::real::Real;
use crate::seeds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config serialize: {0}")]
    Ser(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<X> = std::result::Result<X, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Mnist,
    MnistSc,
    ColoredMnist,
    Synthetic,
}

impl DataKind {
    pub fn name(self) -> &'static str {
        match self {
            DataKind::Mnist => "mnist",
            DataKind::MnistSc => "mnist_sc",
            DataKind::ColoredMnist => "colored_mnist",
            DataKind::Synthetic => "synthetic",
        }
    }
}

/// Synthesis knobs for the group-shift dataset; the seed comes from the
/// enclosing `[data]` section so a run has a single data seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub d_core: usize,
    pub d_spur: usize,
    pub rho: f64,
    pub mu_core: f64,
    pub sigma_core: f64,
    pub mu_spur: f64,
    pub sigma_spur: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_train: s.n_train,
            n_test: s.n_test,
            d_core: s.d_core,
            d_spur: s.d_spur,
            rho: s.rho,
            mu_core: s.mu_core,
            sigma_core: s.sigma_core,
            mu_spur: s.mu_spur,
            sigma_spur: s.sigma_spur,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_train: self.n_train,
            n_test: self.n_test,
            d_core: self.d_core,
            d_spur: self.d_spur,
            rho: self.rho,
            mu_core: self.mu_core,
            sigma_core: self.sigma_core,
            mu_spur: self.mu_spur,
            sigma_spur: self.sigma_spur,
            seed,
        }
    }
}

fn default_val_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Directory with IDX files; required for the MNIST kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Cap on training samples taken from disk, before the validation carve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    /// Fraction of each training group moved into the validation split.
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Present only for `kind = "synthetic"`; defaults apply if omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Cnn,
    Mlp,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_model_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// Hidden widths; MLP only.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_model_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Mse,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaliencyKind {
    #[default]
    Input,
    Activation,
    Gram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScalarizeKind {
    #[default]
    Predicted,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

fn default_lambda() -> f64 {
    0.5
}

fn default_batch_size() -> usize {
    32
}

fn default_eval_every() -> usize {
    1
}

fn default_balancer_decay() -> f64 {
    0.99
}

fn default_max_loss() -> f64 {
    1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub distance: DistanceKind,
    #[serde(default)]
    pub saliency: SaliencyKind,
    #[serde(default)]
    pub scalarize: ScalarizeKind,
    /// Layer tag the activation/gram saliency reads from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<String>,
    /// Student-side tag override for mismatched architectures.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student_tap: Option<String>,
    #[serde(default)]
    pub optimizer: OptimKind,
    /// SGD only; ignored by adam.
    #[serde(default)]
    pub momentum: f64,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_balancer_decay")]
    pub balancer_decay: f64,
    #[serde(default = "default_max_loss")]
    pub max_loss: f64,
    #[serde(default)]
    pub precision: Precision,
}

impl TrainConfig {
    pub fn sal_mode(&self) -> Result<SalMode> {
        let scalarize = match self.scalarize {
            ScalarizeKind::Predicted => Scalarize::Predicted,
            ScalarizeKind::Sum => Scalarize::SumAll,
        };
        let tap = || -> Result<String> {
            match &self.tap {
                Some(t) if !t.is_empty() => Ok(t.clone()),
                _ => Err(ConfigError::Invalid(format!(
                    "saliency = \"{}\" requires a tap key",
                    match self.saliency {
                        SaliencyKind::Activation => "activation",
                        _ => "gram",
                    }
                ))),
            }
        };
        Ok(match self.saliency {
            SaliencyKind::Input => SalMode::Input { scalarize },
            SaliencyKind::Activation => SalMode::Activation {
                tap: tap()?,
                scalarize,
            },
            SaliencyKind::Gram => SalMode::Gram { tap: tap()? },
        })
    }

    pub fn to_ule_config(&self) -> Result<UleConfig> {
        let optim = match self.optimizer {
            OptimKind::Adam => OptimSpec::adam_default(),
            OptimKind::Sgd => OptimSpec::Sgd {
                momentum: self.momentum,
            },
        };
        let cfg = UleConfig {
            lambda: self.lambda,
            distance: match self.distance {
                DistanceKind::Mse => Distance::Mse,
                DistanceKind::L1 => Distance::L1,
            },
            sal_mode: self.sal_mode()?,
            student_tap: self.student_tap.clone().filter(|t| !t.is_empty()),
            optim,
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            eval_every: self.eval_every,
            balancer_decay: self.balancer_decay,
            max_loss: self.max_loss,
        };
        cfg.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "val_fraction {} outside (0, 1)",
                d.val_fraction
            )));
        }
        match d.kind {
            DataKind::Synthetic => {}
            _ => {
                if d.dir.is_none() {
                    return Err(ConfigError::Invalid(format!(
                        "kind = \"{}\" requires a dir key",
                        d.kind.name()
                    )));
                }
                if d.synthetic.is_some() {
                    return Err(ConfigError::Invalid(format!(
                        "synthetic table is meaningless for kind = \"{}\"",
                        d.kind.name()
                    )));
                }
            }
        }
        self.train.to_ule_config()?;
        Ok(())
    }
}

/// Ready-to-use splits for one experiment.  Evaluation-facing splits of the
/// label-marked datasets are class-grouped (the mark is a function of the
/// label, so the full group grid would be mostly empty); the synthetic data
/// keeps its genuine 2x2 groups.
pub struct PreparedData<T: Real> {
    /// Training-dataset name as it appears in records.
    pub name: String,
    pub train: GroupedDataset<T>,
    pub val: GroupedDataset<T>,
    pub test: GroupedDataset<T>,
    /// Out-of-distribution evaluation target, e.g. clean digits for a model
    /// trained on marked ones.
    pub transfer: Option<(String, GroupedDataset<T>)>,
}

/// Moves a seeded fraction of every group into a validation split.
pub fn carve_val<T: Real>(
    full: &GroupedDataset<T>,
    fraction: f64,
    seed: u64,
) -> Result<(GroupedDataset<T>, GroupedDataset<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ConfigError::Invalid(format!(
            "val fraction {fraction} outside (0, 1)"
        )));
    }
    let n_groups = full.n_groups() as usize;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for i in 0..full.len() {
        buckets[full.group_of(i) as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[seeds::STREAM_SPLIT]));
    let mut val_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (g, bucket) in buckets.iter_mut().enumerate() {
        if bucket.len() < 2 {
            return Err(ConfigError::Invalid(format!(
                "group {g} has {} sample(s); cannot carve a validation split",
                bucket.len()
            )));
        }
        bucket.shuffle(&mut rng);
        let k = ((bucket.len() as f64 * fraction).round() as usize)
            .max(1)
            .min(bucket.len() - 1);
        val_idx.extend_from_slice(&bucket[..k]);
        train_idx.extend_from_slice(&bucket[k..]);
    }
    // Restore dataset order so the carve seed only decides membership.
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((full.subset(&train_idx)?, full.subset(&val_idx)?))
}

impl DataConfig {
    pub fn build<T: Real>(&self) -> Result<PreparedData<T>> {
        match self.kind {
            DataKind::Synthetic => {
                let spec = self
                    .synthetic
                    .clone()
                    .unwrap_or_default()
                    .spec(self.seed);
                let (full_train, test) = make_synthetic::<T>(&spec)?;
                let (train, val) = carve_val(&full_train, self.val_fraction, self.seed)?;
                Ok(PreparedData {
                    name: self.kind.name().to_string(),
                    train,
                    val,
                    test,
                    transfer: None,
                })
            }
            kind => {
                let dir = self.dir.as_deref().ok_or_else(|| {
                    ConfigError::Invalid(format!("kind = \"{}\" requires a dir key", kind.name()))
                })?;
                let mut base_train = load_mnist_dir::<T>(dir, "train")?;
                if let Some(limit) = self.train_limit {
                    if limit < base_train.len() {
                        let idx: Vec<usize> = (0..limit).collect();
                        base_train = base_train.subset(&idx)?;
                    }
                }
                let base_test = load_mnist_dir::<T>(dir, "test")?;
                let (marked_train, marked_test, transfer) = match kind {
                    DataKind::Mnist => (base_train.clone(), base_test.clone(), None),
                    DataKind::MnistSc => (
                        make_mnist_sc(&base_train)?.without_attrs(),
                        make_mnist_sc(&base_test)?.without_attrs(),
                        Some(("mnist".to_string(), base_test.clone())),
                    ),
                    DataKind::ColoredMnist => (
                        make_colored_mnist(&base_train, &COLOR_PALETTE)?.without_attrs(),
                        make_colored_mnist(&base_test, &COLOR_PALETTE)?.without_attrs(),
                        Some(("mnist".to_string(), base_test.to_rgb()?)),
                    ),
                    DataKind::Synthetic => unreachable!(),
                };
                let (train, val) = carve_val(&marked_train, self.val_fraction, self.seed)?;
                Ok(PreparedData {
                    name: kind.name().to_string(),
                    train,
                    val,
                    test: marked_test,
                    transfer,
                })
            }
        }
    }
}

/// Builds the configured architecture for a concrete sample shape.
pub fn build_network<T: Real>(
    model: &ModelConfig,
    sample_shape: &[usize],
    n_classes: usize,
) -> Result<Network<T>> {
    match model.arch {
        Arch::Cnn => {
            if sample_shape.len() != 3 || sample_shape[1] != sample_shape[2] {
                return Err(ConfigError::Invalid(format!(
                    "cnn wants square [c, s, s] samples, dataset has {sample_shape:?}"
                )));
            }
            Ok(Network::poc_cnn(
                sample_shape[0],
                sample_shape[1],
                n_classes,
                model.seed,
            )?)
        }
        Arch::Mlp => Ok(Network::mlp(
            sample_shape.to_vec(),
            &model.hidden,
            n_classes,
            model.seed,
        )?),
    }
}
