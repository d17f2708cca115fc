//! Hyperparameter grid over (lambda, lr, weight decay) with repeated runs,
//! selection by mean validation worst-group accuracy, and a test re-run of
//! the winner.  Every record the sweep emits is replayable from the records
//! file alone.
//!
//! Within a repeat, the checkpoint is the evaluation point with the best
//! validation WGA (earliest epoch on ties); the repeat's test metrics come
//! from re-evaluating that snapshot.  A cell whose repeat aborts is marked
//! failed and skipped; the sweep continues.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{build_network, ConfigError, ExperimentConfig, PreparedData};
use crate::engine::{train_erm, train_ule, EngineError, UleConfig};
use crate::metrics::{evaluate_groups, GroupMetrics, MetricsError};
use crate::nn::Network;
use crate::real::Real;
use crate::records::{Mode, Record, RecordWriter, RecordsError, RunKey, Split};
use crate::seeds;

/// Conventional weight-decay arms.
pub const STANDARD_WD: f64 = 1e-4;
pub const STRONG_WD: f64 = 1e-2;

/// Initialisation streams, derived per run seed.  The single network of a
/// baseline run takes the teacher stream so it matches the teacher's draws.
const INIT_STUDENT: u64 = 1;
const INIT_TEACHER: u64 = 2;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Records(#[from] RecordsError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("run failed: {0}")]
    Run(String),
    #[error("invalid sweep: {0}")]
    Invalid(String),
}

pub type Result<X> = std::result::Result<X, SweepError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub lambdas: Vec<f64>,
    pub lrs: Vec<f64>,
    pub weight_decays: Vec<f64>,
    pub repeats: u32,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            lambdas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            lrs: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            weight_decays: vec![STANDARD_WD, STRONG_WD],
            repeats: 5,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lrs.is_empty() || self.weight_decays.is_empty() {
            return Err(SweepError::Invalid("empty grid axis".into()));
        }
        if self.repeats == 0 {
            return Err(SweepError::Invalid("repeats must be at least 1".into()));
        }
        for &l in &self.lambdas {
            if !(0.0..=1.0).contains(&l) {
                return Err(SweepError::Invalid(format!("lambda {l} outside [0, 1]")));
            }
        }
        for &lr in &self.lrs {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(SweepError::Invalid(format!("lr {lr} not positive")));
            }
        }
        for &wd in &self.weight_decays {
            if !(wd.is_finite() && wd >= 0.0) {
                return Err(SweepError::Invalid(format!("weight decay {wd} negative")));
            }
        }
        Ok(())
    }

    /// Cells in selection order: lambda-major, then lr, then weight decay.
    /// The cell index is also the seed-stream index, so reordering the grid
    /// reseeds the runs.
    pub fn cells(&self, mode: Mode) -> Vec<CellId> {
        let lambdas: &[f64] = match mode {
            // The baseline has no saliency term; its grid collapses to a
            // single lambda arm recorded as 1.0.
            Mode::Erm => &[1.0],
            Mode::Ule => &self.lambdas,
        };
        let mut out = Vec::new();
        for &lambda in lambdas {
            for &lr in &self.lrs {
                for &weight_decay in &self.weight_decays {
                    out.push(CellId {
                        lambda,
                        lr,
                        weight_decay,
                    });
                }
            }
        }
        out
    }

    pub fn run_seed(&self, cell: usize, repeat: u32) -> u64 {
        seeds::derive(
            self.seed,
            &[seeds::STREAM_SWEEP, cell as u64, repeat as u64],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl CellId {
    /// Lexicographic (lambda, lr, weight_decay); grids are validated finite.
    fn key(&self) -> (f64, f64, f64) {
        (self.lambda, self.lr, self.weight_decay)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: u32,
    pub seed: u64,
    pub best_epoch: u32,
    pub val_wga: f64,
    pub test: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellId,
    pub repeats: Vec<RepeatResult>,
    /// Set when any repeat aborted; such a cell never wins.
    pub error: Option<String>,
    pub mean_val_wga: f64,
    pub mean_test_wga: f64,
    pub std_test_wga: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub cells: Vec<CellResult>,
    /// Index into `cells`; None when every cell failed.
    pub winner: Option<usize>,
    pub failed: usize,
}

impl SweepOutcome {
    pub fn winner_cell(&self) -> Option<&CellResult> {
        self.winner.map(|i| &self.cells[i])
    }
}

struct BestPoint<T: Real> {
    epoch: u32,
    val_wga: f64,
    teacher: Network<T>,
    student: Option<Network<T>>,
}

struct RepeatTrace<T: Real> {
    evals: Vec<(u32, GroupMetrics)>,
    best: Option<BestPoint<T>>,
}

impl<T: Real> RepeatTrace<T> {
    fn new() -> Self {
        Self {
            evals: Vec::new(),
            best: None,
        }
    }

    fn observe(
        &mut self,
        epoch: u32,
        metrics: GroupMetrics,
        teacher: &Network<T>,
        student: Option<&Network<T>>,
    ) {
        let better = match &self.best {
            None => true,
            Some(b) => metrics.wga > b.val_wga,
        };
        if better {
            self.best = Some(BestPoint {
                epoch,
                val_wga: metrics.wga,
                teacher: teacher.clone(),
                student: student.cloned(),
            });
        }
        self.evals.push((epoch, metrics));
    }
}

/// A finished run: the per-repeat summary plus the parameter snapshots taken
/// at the best validation point.
pub struct TrainedRun<T: Real> {
    pub result: RepeatResult,
    /// The debiased model (or the only model, for the baseline).
    pub teacher: Network<T>,
    pub student: Option<Network<T>>,
    /// Transfer-target metrics of the snapshot, when the dataset has one.
    pub transfer: Option<(String, GroupMetrics)>,
}

fn cfg_for(base: &UleConfig, cell: &CellId, seed: u64) -> UleConfig {
    let mut cfg = base.clone();
    cfg.lambda = cell.lambda;
    cfg.lr = cell.lr;
    cfg.weight_decay = cell.weight_decay;
    cfg.seed = seed;
    cfg
}

fn sample_std(vals: &[f64], mean: f64) -> f64 {
    if vals.len() < 2 {
        return 0.0;
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    var.sqrt()
}

/// One training run: train, track the best validation point, then re-evaluate
/// that snapshot on the test split (and the transfer target, when present).
/// Loss and evaluation records land in epoch order.
pub fn run_single<T: Real>(
    base: &ExperimentConfig,
    data: &PreparedData<T>,
    mode: Mode,
    key: &RunKey,
    cfg: &UleConfig,
    writer: &mut RecordWriter,
) -> Result<TrainedRun<T>> {
    let sample_shape = data.train.sample_shape().to_vec();
    let classes = data.train.n_classes() as usize;
    let mk = |stream: u64| -> Result<Network<T>> {
        let mut m = base.model.clone();
        m.seed = seeds::derive(cfg.seed, &[stream]);
        Ok(build_network::<T>(&m, &sample_shape, classes)?)
    };

    let mut trace = RepeatTrace::<T>::new();
    let stats = match mode {
        Mode::Erm => {
            let mut net = mk(INIT_TEACHER)?;
            train_erm(&mut net, &data.train, cfg, |st, net| {
                let m = evaluate_groups(net, &data.val)
                    .map_err(|e| EngineError::Hook(e.to_string()))?;
                trace.observe(st.epoch as u32, m, net, None);
                Ok(())
            })
        }
        Mode::Ule => {
            let mut student = mk(INIT_STUDENT)?;
            let mut teacher = mk(INIT_TEACHER)?;
            train_ule(&mut student, &mut teacher, &data.train, cfg, |st, s, t| {
                let m = evaluate_groups(t, &data.val)
                    .map_err(|e| EngineError::Hook(e.to_string()))?;
                trace.observe(st.epoch as u32, m, t, Some(s));
                Ok(())
            })
        }
    }
    .map_err(|e| SweepError::Run(e.to_string()))?;

    let best = trace
        .best
        .take()
        .ok_or_else(|| SweepError::Run("run produced no evaluation point".into()))?;
    let test = evaluate_groups(&best.teacher, &data.test)?;

    let mut evals = trace.evals.into_iter().peekable();
    for st in &stats {
        writer.write(&Record::loss(key, st))?;
        if evals.peek().is_some_and(|(e, _)| *e as usize == st.epoch) {
            let (epoch, m) = evals.next().expect("peeked");
            writer.write(&Record::eval(key, epoch, data.name.clone(), Split::Val, m))?;
        }
    }
    writer.write(&Record::eval(
        key,
        best.epoch,
        data.name.clone(),
        Split::Test,
        test.clone(),
    ))?;

    let transfer = match &data.transfer {
        Some((name, target)) => {
            let m = evaluate_groups(&best.teacher, target)?;
            writer.write(&Record::eval(
                key,
                best.epoch,
                name.clone(),
                Split::Test,
                m.clone(),
            ))?;
            Some((name.clone(), m))
        }
        None => None,
    };

    Ok(TrainedRun {
        result: RepeatResult {
            repeat: key.repeat,
            seed: cfg.seed,
            best_epoch: best.epoch,
            val_wga: best.val_wga,
            test,
        },
        teacher: best.teacher,
        student: best.student,
        transfer,
    })
}

/// Runs the whole grid.  Selection: highest mean validation WGA over repeats,
/// ties resolved toward the lexicographically smallest (lambda, lr, wd).
pub fn run_sweep<T: Real>(
    base: &ExperimentConfig,
    spec: &SweepSpec,
    mode: Mode,
    run_name: &str,
    writer: &mut RecordWriter,
) -> Result<SweepOutcome> {
    spec.validate()?;
    let data = base.data.build::<T>()?;
    let base_cfg = base.train.to_ule_config()?;

    let mut cells = Vec::new();
    let mut failed = 0usize;
    for (ci, cell) in spec.cells(mode).into_iter().enumerate() {
        let mut repeats = Vec::new();
        let mut error = None;
        for r in 0..spec.repeats {
            let seed = spec.run_seed(ci, r);
            let cfg = cfg_for(&base_cfg, &cell, seed);
            let key = RunKey {
                run: run_name.to_string(),
                mode,
                dataset: data.name.clone(),
                lambda: cell.lambda,
                lr: cell.lr,
                weight_decay: cell.weight_decay,
                repeat: r,
                seed,
            };
            match run_single(base, &data, mode, &key, &cfg, writer) {
                Ok(run) => repeats.push(run.result),
                Err(e) => {
                    error = Some(format!("repeat {r}: {e}"));
                    break;
                }
            }
        }
        if error.is_some() {
            failed += 1;
        }
        let val_wgas: Vec<f64> = repeats.iter().map(|r| r.val_wga).collect();
        let test_wgas: Vec<f64> = repeats.iter().map(|r| r.test.wga).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let mean_val_wga = mean(&val_wgas);
        let mean_test_wga = mean(&test_wgas);
        let std_test_wga = sample_std(&test_wgas, mean_test_wga);
        cells.push(CellResult {
            cell,
            repeats,
            error,
            mean_val_wga,
            mean_test_wga,
            std_test_wga,
        });
    }

    let winner = select_winner(&cells);
    Ok(SweepOutcome {
        cells,
        winner,
        failed,
    })
}

/// Highest mean validation WGA among non-failed cells; ties go to the
/// lexicographically smallest (lambda, lr, weight_decay).
pub fn select_winner(cells: &[CellResult]) -> Option<usize> {
    cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.error.is_none())
        .max_by(|(_, a), (_, b)| {
            a.mean_val_wga
                .partial_cmp(&b.mean_val_wga)
                .expect("finite wga")
                .then_with(|| b.cell.key().partial_cmp(&a.cell.key()).expect("finite key"))
        })
        .map(|(i, _)| i)
}
