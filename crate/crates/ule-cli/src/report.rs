//! Tables from records files: the final test-accuracy matrix and the
//! lambda-sensitivity summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ule_core::records::{read_records, Mode, Record, Split};

/// Groups test evaluations that differ only in the repeat label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct RowKey {
    dataset_rank: usize,
    dataset: String,
    /// Own test set first, transfer targets after.
    transfer: bool,
    eval_on: String,
    run: String,
    mode: Mode,
    // Bit patterns: the grids are nonnegative, where ordering by bits is
    // monotone.
    lambda: u64,
    lr: u64,
    weight_decay: u64,
}

#[derive(Default)]
struct Row {
    acc: Vec<f64>,
    wga: Vec<f64>,
}

fn dataset_rank(name: &str) -> usize {
    ["mnist", "mnist_sc", "colored_mnist", "synthetic"]
        .iter()
        .position(|k| *k == name)
        .unwrap_or(4)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn collect_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("records dir {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no *.jsonl files in {}", path.display());
        }
        return Ok(files);
    }
    Ok(vec![path.to_path_buf()])
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render(records: &Path, csv: Option<&Path>) -> Result<()> {
    let mut evals = Vec::new();
    for file in collect_files(records)? {
        for rec in
            read_records(&file).with_context(|| format!("records {}", file.display()))?
        {
            if let Record::Eval {
                key,
                eval_on,
                split: Split::Test,
                metrics,
                ..
            } = rec
            {
                evals.push((key, eval_on, metrics));
            }
        }
    }
    if evals.is_empty() {
        bail!("no test evaluations in {}", records.display());
    }

    let mut rows: BTreeMap<RowKey, Row> = BTreeMap::new();
    for (key, eval_on, metrics) in &evals {
        let row = rows
            .entry(RowKey {
                dataset_rank: dataset_rank(&key.dataset),
                dataset: key.dataset.clone(),
                transfer: *eval_on != key.dataset,
                eval_on: eval_on.clone(),
                run: key.run.clone(),
                mode: key.mode,
                lambda: key.lambda.to_bits(),
                lr: key.lr.to_bits(),
                weight_decay: key.weight_decay.to_bits(),
            })
            .or_default();
        row.acc.push(metrics.overall());
        row.wga.push(metrics.wga);
    }

    println!("test accuracy (mean ± std over repeats)");
    println!(
        "{:<14} {:<14} {:<12} {:>4} {:>6} {:>8} {:>8} {:>3} {:>17} {:>17}",
        "run", "dataset", "eval on", "mode", "lambda", "lr", "wd", "n", "accuracy", "wga"
    );
    let mut acc_csv = String::from("run,dataset,eval_on,mode,lambda,lr,weight_decay,n,acc_mean,acc_std,wga_mean,wga_std\n");
    for (k, row) in &rows {
        let (lambda, lr, wd) = (
            f64::from_bits(k.lambda),
            f64::from_bits(k.lr),
            f64::from_bits(k.weight_decay),
        );
        let (am, asd) = mean_std(&row.acc);
        let (wm, wsd) = mean_std(&row.wga);
        println!(
            "{:<14} {:<14} {:<12} {:>4} {:>6.2} {:>8.0e} {:>8.0e} {:>3} {:>8.4} ± {:>6.4} {:>8.4} ± {:>6.4}",
            k.run, k.dataset, k.eval_on, k.mode, lambda, lr, wd, row.acc.len(), am, asd, wm, wsd
        );
        acc_csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&k.run),
            csv_field(&k.dataset),
            csv_field(&k.eval_on),
            k.mode,
            lambda,
            lr,
            wd,
            row.acc.len(),
            am,
            asd,
            wm,
            wsd
        ));
    }

    // Lambda sensitivity: worst-group accuracy on the training dataset's own
    // test split, pooled over repeats (and any lr/wd settings present).
    let mut lambda_rows: BTreeMap<(usize, String, u64), Vec<f64>> = BTreeMap::new();
    for (key, eval_on, metrics) in &evals {
        if key.mode == Mode::Ule && eval_on == &key.dataset {
            lambda_rows
                .entry((
                    dataset_rank(&key.dataset),
                    key.dataset.clone(),
                    key.lambda.to_bits(),
                ))
                .or_default()
                .push(metrics.wga);
        }
    }
    let mut lambda_csv = String::from("dataset,lambda,n,wga_mean,wga_std\n");
    if !lambda_rows.is_empty() {
        println!();
        println!("test wga by lambda");
        println!("{:<14} {:>6} {:>3} {:>17}", "dataset", "lambda", "n", "wga");
        for ((_, dataset, lambda), wgas) in &lambda_rows {
            let lambda = f64::from_bits(*lambda);
            let (wm, wsd) = mean_std(wgas);
            println!(
                "{:<14} {:>6.2} {:>3} {:>8.4} ± {:>6.4}",
                dataset,
                lambda,
                wgas.len(),
                wm,
                wsd
            );
            lambda_csv.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(dataset),
                lambda,
                wgas.len(),
                wm,
                wsd
            ));
        }
    }

    if let Some(dir) = csv {
        std::fs::create_dir_all(dir).with_context(|| format!("csv dir {}", dir.display()))?;
        std::fs::write(dir.join("accuracy.csv"), acc_csv)?;
        std::fs::write(dir.join("lambda_wga.csv"), lambda_csv)?;
        println!();
        println!("csv written to {}", dir.display());
    }
    Ok(())
}
