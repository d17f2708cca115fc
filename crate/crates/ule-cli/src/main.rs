//! Command-line harness: dataset preparation, training, evaluation, grid
//! sweeps, saliency image export, and report rendering from records files.

mod report;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use ule_core::config::{ExperimentConfig, Precision, ScalarizeKind};
use ule_core::data::{export_dataset, import_dataset, GroupedDataset};
use ule_core::engine::{SalMode, Scalarize};
use ule_core::export::export_saliency_images;
use ule_core::metrics::{evaluate_groups, GroupMetrics};
use ule_core::nn::{load_checkpoint, save_checkpoint};
use ule_core::records::{Mode, RecordWriter, RunKey};
use ule_core::sweep::{run_single, run_sweep, SweepSpec};
use ule_core::Real;

#[derive(Parser)]
#[command(name = "ule", about = "Dual-network shortcut unlearning experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the configured dataset splits and serialize them for reuse.
    PrepareData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output directory for the split containers.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model (erm) or one student/teacher pair (ule).
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mode: Mode,
        /// Run label stored on every record; defaults to the config stem.
        #[arg(long)]
        run: Option<String>,
        /// Repeat label stored on the records.
        #[arg(long, default_value_t = 0)]
        repeat: u32,
        /// Records file, appended to.
        #[arg(long, default_value = "runs.jsonl")]
        records: PathBuf,
        /// Directory receiving checkpoint files.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Load splits prepared by prepare-data instead of rebuilding them.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Group metrics of a stored checkpoint on one split.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split to evaluate: train, val, test or transfer.
        #[arg(long, default_value = "test")]
        on: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Grid search over (lambda, lr, weight decay) with repeats.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mode: Mode,
        #[arg(long)]
        run: Option<String>,
        #[arg(long, default_value = "runs.jsonl")]
        records: PathBuf,
        /// Comma-separated lambda grid; defaults to 0.0..1.0 step 0.1.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Comma-separated learning-rate grid; defaults to 1e-1..1e-5.
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        /// Comma-separated weight-decay grid; defaults to {1e-4, 1e-2}.
        #[arg(long, value_delimiter = ',')]
        weight_decays: Option<Vec<f64>>,
        #[arg(long, default_value_t = 5)]
        repeats: u32,
        /// Master seed for per-cell run seeds.
        #[arg(long, default_value_t = 0)]
        sweep_seed: u64,
        /// Lambda-sensitivity protocol: 3 repeats over the lambda grid with
        /// lr and weight decay pinned to the config values.
        #[arg(long)]
        fig_protocol: bool,
    },
    /// Export saliency images for the first samples of a split.
    Saliency {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value = "test")]
        on: String,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render the accuracy matrix and the lambda-vs-WGA table from records.
    Report {
        /// Records file, or a directory of *.jsonl files.
        #[arg(long)]
        records: PathBuf,
        /// Also write the tables as CSV files into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Sidecar describing a prepared-data directory.
#[derive(Serialize, Deserialize)]
struct PreparedMeta {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    transfer: Option<String>,
}

/// Runs a generic command body at the configured precision.
macro_rules! dispatch {
    ($cfg:expr, $call:ident ($($args:tt)*)) => {
        match $cfg.train.precision {
            Precision::F32 => $call::<f32>($($args)*),
            Precision::F64 => $call::<f64>($($args)*),
        }
    };
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::PrepareData { config, out } => {
            let cfg = load_config(&config.config)?;
            dispatch!(cfg, prepare_data(&cfg, &out))
        }
        Cmd::Train {
            config,
            mode,
            run,
            repeat,
            records,
            out,
            data,
        } => {
            let cfg = load_config(&config.config)?;
            let run = run_label(run, &config.config);
            dispatch!(
                cfg,
                train(&cfg, mode, &run, repeat, &records, &out, data.as_deref())
            )
        }
        Cmd::Eval {
            config,
            checkpoint,
            on,
            data,
        } => {
            let cfg = load_config(&config.config)?;
            dispatch!(cfg, eval(&cfg, &checkpoint, &on, data.as_deref()))
        }
        Cmd::Sweep {
            config,
            mode,
            run,
            records,
            lambdas,
            lrs,
            weight_decays,
            repeats,
            sweep_seed,
            fig_protocol,
        } => {
            let cfg = load_config(&config.config)?;
            let run = run_label(run, &config.config);
            let mut spec = SweepSpec {
                repeats,
                seed: sweep_seed,
                ..SweepSpec::default()
            };
            if let Some(l) = lambdas {
                spec.lambdas = l;
            }
            if let Some(l) = lrs {
                spec.lrs = l;
            }
            if let Some(w) = weight_decays {
                spec.weight_decays = w;
            }
            if fig_protocol {
                spec.repeats = 3;
                spec.lrs = vec![cfg.train.lr];
                spec.weight_decays = vec![cfg.train.weight_decay];
            }
            dispatch!(cfg, sweep(&cfg, &spec, mode, &run, &records))
        }
        Cmd::Saliency {
            config,
            checkpoint,
            out,
            count,
            on,
            data,
        } => {
            let cfg = load_config(&config.config)?;
            dispatch!(
                cfg,
                saliency_cmd(&cfg, &checkpoint, &out, count, &on, data.as_deref())
            )
        }
        Cmd::Report { records, csv } => report::render(&records, csv.as_deref()),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("config {}", path.display()))
}

fn run_label(run: Option<String>, config: &Path) -> String {
    run.unwrap_or_else(|| {
        config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "run".into())
    })
}

/// Splits prepared on disk, or built fresh from the config.
fn load_or_build<T: Real>(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
) -> Result<ule_core::config::PreparedData<T>> {
    let Some(dir) = data_dir else {
        return Ok(cfg.data.build::<T>()?);
    };
    let meta_path = dir.join("meta.toml");
    let meta: PreparedMeta = toml::from_str(
        &std::fs::read_to_string(&meta_path)
            .with_context(|| format!("prepared data {}", meta_path.display()))?,
    )?;
    let load = |stem: &str| -> Result<GroupedDataset<T>> {
        let path = dir.join(format!("{stem}.gds"));
        import_dataset::<T>(&path).with_context(|| format!("split {}", path.display()))
    };
    let transfer = match &meta.transfer {
        Some(name) => Some((name.clone(), load("transfer")?)),
        None => None,
    };
    Ok(ule_core::config::PreparedData {
        name: meta.name,
        train: load("train")?,
        val: load("val")?,
        test: load("test")?,
        transfer,
    })
}

fn prepare_data<T: Real>(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = cfg.data.build::<T>()?;
    std::fs::create_dir_all(out).with_context(|| format!("output dir {}", out.display()))?;
    export_dataset(&data.train, &out.join("train.gds"))?;
    export_dataset(&data.val, &out.join("val.gds"))?;
    export_dataset(&data.test, &out.join("test.gds"))?;
    let meta = PreparedMeta {
        name: data.name.clone(),
        transfer: data.transfer.as_ref().map(|(n, _)| n.clone()),
    };
    if let Some((_, ds)) = &data.transfer {
        export_dataset(ds, &out.join("transfer.gds"))?;
    }
    std::fs::write(out.join("meta.toml"), toml::to_string(&meta)?)?;
    println!(
        "prepared {}: train {} / val {} / test {}{}",
        data.name,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.transfer
            .as_ref()
            .map(|(n, d)| format!(" / transfer {n} {}", d.len()))
            .unwrap_or_default()
    );
    Ok(())
}

fn print_metrics(label: &str, m: &GroupMetrics) {
    let groups: Vec<String> = m
        .per_group
        .iter()
        .zip(&m.counts)
        .map(|(a, c)| format!("{a:.4}({c})"))
        .collect();
    println!(
        "{label}: average {:.4}  wga {:.4}  overall {:.4}  groups [{}]",
        m.average,
        m.wga,
        m.overall(),
        groups.join(", ")
    );
}

fn train<T: Real>(
    cfg: &ExperimentConfig,
    mode: Mode,
    run: &str,
    repeat: u32,
    records: &Path,
    out: &Path,
    data_dir: Option<&Path>,
) -> Result<()> {
    let data = load_or_build::<T>(cfg, data_dir)?;
    let ule_cfg = cfg.train.to_ule_config()?;
    let key = RunKey {
        run: run.to_string(),
        mode,
        dataset: data.name.clone(),
        lambda: match mode {
            Mode::Erm => 1.0,
            Mode::Ule => ule_cfg.lambda,
        },
        lr: ule_cfg.lr,
        weight_decay: ule_cfg.weight_decay,
        repeat,
        seed: ule_cfg.seed,
    };
    let mut writer = RecordWriter::append(records)?;
    let trained = run_single::<T>(cfg, &data, mode, &key, &ule_cfg, &mut writer)?;

    std::fs::create_dir_all(out).with_context(|| format!("output dir {}", out.display()))?;
    let stem = format!("{run}_{mode}");
    let teacher_path = out.join(match mode {
        Mode::Erm => format!("{stem}.ckpt"),
        Mode::Ule => format!("{stem}_teacher.ckpt"),
    });
    save_checkpoint(&trained.teacher, &teacher_path)?;
    let mut saved = vec![teacher_path.display().to_string()];
    if let Some(student) = &trained.student {
        let path = out.join(format!("{stem}_student.ckpt"));
        save_checkpoint(student, &path)?;
        saved.push(path.display().to_string());
    }

    let r = &trained.result;
    println!(
        "{run} [{mode}] on {}: best epoch {} (val wga {:.4})",
        data.name, r.best_epoch, r.val_wga
    );
    print_metrics(&format!("test {}", data.name), &r.test);
    if let Some((name, m)) = &trained.transfer {
        print_metrics(&format!("test {name}"), m);
    }
    println!("checkpoints: {}", saved.join(", "));
    println!("records: {}", records.display());
    Ok(())
}

fn eval<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    on: &str,
    data_dir: Option<&Path>,
) -> Result<()> {
    let data = load_or_build::<T>(cfg, data_dir)?;
    let (label, split): (String, &GroupedDataset<T>) = match on {
        "train" => ("train".into(), &data.train),
        "val" => ("val".into(), &data.val),
        "test" => (format!("test {}", data.name), &data.test),
        "transfer" => match &data.transfer {
            Some((name, ds)) => (format!("test {name}"), ds),
            None => bail!("dataset {} has no transfer target", data.name),
        },
        other => bail!("unknown split {other:?} (train, val, test, transfer)"),
    };
    let mut net = ule_core::config::build_network::<T>(
        &cfg.model,
        split.sample_shape(),
        split.n_classes() as usize,
    )?;
    load_checkpoint(&mut net, checkpoint)
        .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    let m = evaluate_groups(&net, split)?;
    print_metrics(&label, &m);
    Ok(())
}

fn sweep<T: Real>(
    cfg: &ExperimentConfig,
    spec: &SweepSpec,
    mode: Mode,
    run: &str,
    records: &Path,
) -> Result<()> {
    let mut writer = RecordWriter::append(records)?;
    let out = run_sweep::<T>(cfg, spec, mode, run, &mut writer)?;
    println!(
        "{:>7} {:>9} {:>9} {:>9} {:>10} {:>16}",
        "lambda", "lr", "wd", "val wga", "test wga", "status"
    );
    for cell in &out.cells {
        let status = match &cell.error {
            Some(e) => format!("failed: {e}"),
            None => "ok".into(),
        };
        println!(
            "{:>7.2} {:>9.0e} {:>9.0e} {:>9.4} {:>7.4} ± {:.4} {:>6}",
            cell.cell.lambda,
            cell.cell.lr,
            cell.cell.weight_decay,
            cell.mean_val_wga,
            cell.mean_test_wga,
            cell.std_test_wga,
            status
        );
    }
    if out.failed > 0 {
        println!("{} cell(s) failed", out.failed);
    }
    match out.winner_cell() {
        Some(best) => {
            println!(
                "winner: lambda {:.2} lr {:.0e} wd {:.0e} -> val wga {:.4}, test wga {:.4} ± {:.4}",
                best.cell.lambda,
                best.cell.lr,
                best.cell.weight_decay,
                best.mean_val_wga,
                best.mean_test_wga,
                best.std_test_wga
            );
        }
        None => bail!("every sweep cell failed"),
    }
    println!("records: {}", records.display());
    Ok(())
}

fn saliency_cmd<T: Real>(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out: &Path,
    count: usize,
    on: &str,
    data_dir: Option<&Path>,
) -> Result<()> {
    let data = load_or_build::<T>(cfg, data_dir)?;
    let split: &GroupedDataset<T> = match on {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        "transfer" => match &data.transfer {
            Some((_, ds)) => ds,
            None => bail!("dataset {} has no transfer target", data.name),
        },
        other => bail!("unknown split {other:?} (train, val, test, transfer)"),
    };
    let take = count.min(split.len());
    if take == 0 {
        bail!("split is empty");
    }
    let idx: Vec<usize> = (0..take).collect();
    let (batch, labels, _) = split.gather(&idx)?;
    let mut net = ule_core::config::build_network::<T>(
        &cfg.model,
        split.sample_shape(),
        split.n_classes() as usize,
    )?;
    load_checkpoint(&mut net, checkpoint)
        .with_context(|| format!("checkpoint {}", checkpoint.display()))?;
    // Images need input-level gradients; the configured scalarization still
    // applies.
    let mode = SalMode::Input {
        scalarize: match cfg.train.scalarize {
            ScalarizeKind::Predicted => Scalarize::Predicted,
            ScalarizeKind::Sum => Scalarize::SumAll,
        },
    };
    let files = export_saliency_images(&net, &batch, &labels, &mode, out)?;
    println!("wrote {} images to {}", files.len(), out.display());
    Ok(())
}
