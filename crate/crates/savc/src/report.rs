//! Run directory artifacts.
//!
//! ```text
//! <output_dir>/
//!   config.toml            resolved configuration
//!   manifest.json          status, config hash, accuracies
//!   session_table.csv      one row per session
//!   session_<t>.json       session record without per-sample predictions
//!   separation_<t>.json    separation report
//!   predictions_<t>.csv    sample,label,predicted,score
//!   confusion_<t>.csv      rows = true class, columns = predicted class
//!   cdf_inter_<t>.csv      value,fraction
//!   cdf_intra_<t>.csv      value,fraction
//!   train_log.jsonl        one loss record per optimizer step
//!   checkpoints/session_<t>.ckpt
//!   checkpoints/last_good.ckpt   only after a failure
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use savc_core::inference::confusion_matrix;
use savc_core::metrics::cdf_export;
use savc_core::trainer::{SessionRecord, StepLoss};

use crate::error::{Error, Result};

pub const SESSION_TABLE: &str = "session_table.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
    DryRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub base_classes: usize,
    pub incremental_sessions: usize,
    pub ways: usize,
    pub shots: usize,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub benchmark: String,
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub schedule: ScheduleSummary,
    pub sessions_completed: usize,
    pub accuracies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_hint: Option<String>,
}

/// One row of `session_table.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub session: usize,
    pub num_classes: usize,
    pub num_test: usize,
    pub accuracy: f64,
    pub base_accuracy: f64,
    pub novel_accuracy: Option<f64>,
    pub r2_base: f64,
    pub r2_novel: Option<f64>,
    pub r2_mutual: Option<f64>,
    pub mean_d_inter: Option<f64>,
    pub mean_d_intra: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl From<&SessionRecord> for TableRow {
    fn from(r: &SessionRecord) -> Self {
        Self {
            session: r.session,
            num_classes: r.num_classes,
            num_test: r.num_test,
            accuracy: r.accuracy,
            base_accuracy: r.base_accuracy,
            novel_accuracy: r.novel_accuracy,
            r2_base: r.separation.r2_base,
            r2_novel: r.separation.r2_novel,
            r2_mutual: r.separation.r2_mutual,
            mean_d_inter: mean(&r.separation.d_inter),
            mean_d_intra: mean(&r.separation.d_intra),
        }
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::format(path, e)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

pub fn write_session_table(path: &Path, rows: &[TableRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_session_table(path: &Path) -> Result<Vec<TableRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Writes the per-session JSON, predictions, confusion matrix and CDFs.
pub fn write_session(dir: &Path, record: &SessionRecord) -> Result<()> {
    let t = record.session;
    let summary = SessionRecord { predictions: Vec::new(), ..record.clone() };
    let mut value = serde_json::to_value(&summary).map_err(|e| Error::format(dir, e))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("predictions");
    }
    write_json(&dir.join(format!("session_{t}.json")), &value)?;
    write_json(&dir.join(format!("separation_{t}.json")), &record.separation)?;

    let path = dir.join(format!("predictions_{t}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for p in &record.predictions {
        w.serialize(p).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let predicted: Vec<usize> = record.predictions.iter().map(|p| p.predicted).collect();
    let labels: Vec<usize> = record.predictions.iter().map(|p| p.label).collect();
    let cm = confusion_matrix(&predicted, &labels, record.num_classes)?;
    let path = dir.join(format!("confusion_{t}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for row in cm.iter_rows() {
        w.write_record(row.iter().map(u64::to_string)).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    for (name, values) in [("inter", &record.separation.d_inter), ("intra", &record.separation.d_intra)] {
        if values.is_empty() {
            continue;
        }
        let path = dir.join(format!("cdf_{name}_{t}.csv"));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["value", "fraction"]).map_err(csv_err(&path))?;
        for (v, f) in cdf_export(values)? {
            w.write_record([v.to_string(), f.to_string()]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct LogLine<'a> {
    session: usize,
    #[serde(flatten)]
    step: &'a StepLoss,
}

/// Appends step losses to `train_log.jsonl`.
pub fn append_train_log(dir: &Path, session: usize, steps: &[StepLoss]) -> Result<()> {
    let path = dir.join("train_log.jsonl");
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for step in steps {
        let line = serde_json::to_string(&LogLine { session, step }).map_err(|e| Error::format(&path, e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn checkpoint_dir(dir: &Path) -> PathBuf {
    dir.join("checkpoints")
}

pub fn checkpoint_path(dir: &Path, session: usize) -> PathBuf {
    checkpoint_dir(dir).join(format!("session_{session}.ckpt"))
}
