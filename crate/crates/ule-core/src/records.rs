//! Line-delimited experiment records: one JSON object per line, appended as
//! training produces them.  Reports are reconstructed solely from these files,
//! so every record carries its full run identity.
//!
//! Rewriting the same records produces byte-identical files: field order is
//! declaration order and float formatting is the shortest round-trip form.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EpochStats;
use crate::metrics::GroupMetrics;

#[derive(Debug, Error)]
pub enum RecordsError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("serialize: {0}")]
    Serialize(serde_json::Error),
}

pub type Result<X> = std::result::Result<X, RecordsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Erm,
    Ule,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Erm => "erm",
            Mode::Ule => "ule",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "erm" => Ok(Mode::Erm),
            "ule" => Ok(Mode::Ule),
            other => Err(format!("unknown mode {other:?} (expected erm or ule)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Identity of one training run; repeated verbatim on every record the run
/// emits.  `dataset` names the training data, not the evaluation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub run: String,
    pub mode: Mode,
    pub dataset: String,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub repeat: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    /// Mean training losses over one epoch.  ERM runs carry the cross-entropy
    /// in both `teacher_ce` and `total` with `sal` zero.
    Loss {
        #[serde(flatten)]
        key: RunKey,
        epoch: u32,
        student_ce: f64,
        teacher_ce: f64,
        sal: f64,
        total: f64,
    },
    /// Group metrics of a frozen snapshot on one split of one dataset.
    /// `eval_on` names the evaluated dataset, which may differ from the
    /// training dataset for transfer evaluations.
    Eval {
        #[serde(flatten)]
        key: RunKey,
        epoch: u32,
        eval_on: String,
        split: Split,
        #[serde(flatten)]
        metrics: GroupMetrics,
    },
}

impl Record {
    pub fn loss(key: &RunKey, stats: &EpochStats) -> Self {
        Record::Loss {
            key: key.clone(),
            epoch: stats.epoch as u32,
            student_ce: stats.student_ce,
            teacher_ce: stats.teacher_ce,
            sal: stats.sal,
            total: stats.total,
        }
    }

    pub fn eval(
        key: &RunKey,
        epoch: u32,
        eval_on: impl Into<String>,
        split: Split,
        metrics: GroupMetrics,
    ) -> Self {
        Record::Eval {
            key: key.clone(),
            epoch,
            eval_on: eval_on.into(),
            split,
            metrics,
        }
    }

    pub fn key(&self) -> &RunKey {
        match self {
            Record::Loss { key, .. } | Record::Eval { key, .. } => key,
        }
    }

    pub fn epoch(&self) -> u32 {
        match self {
            Record::Loss { epoch, .. } | Record::Eval { epoch, .. } => *epoch,
        }
    }
}

/// Append-only writer; every record is flushed as one complete line.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn append(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn write(&mut self, rec: &Record) -> Result<()> {
        let line = serde_json::to_string(rec).map_err(RecordsError::Serialize)?;
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Reads every record in file order.  Blank lines are permitted; anything
/// else must parse, and failures name the offending 1-based line.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec =
            serde_json::from_str(&line).map_err(|source| RecordsError::Parse {
                line: i + 1,
                source,
            })?;
        out.push(rec);
    }
    Ok(out)
}
