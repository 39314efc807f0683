//! CSV schemas written by the harness.
//!
//! `summary.csv` has one row per run, `per_class.csv` one row per
//! (run, epoch, class), and `failures.csv` one row per failed run. Files are
//! always rewritten whole, keyed and sorted by run id, so the output does
//! not depend on the order in which runs finished.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use bislab_core::record::RunRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const FAILURES_FILE: &str = "failures.csv";

/// Sampler columns for a run that has none (the schedule of a joint run).
pub const NONE: &str = "none";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run_id: String,
    pub stage: String,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub labeled_sampler: String,
    pub unlabeled_sampler: String,
    pub q: f64,
    pub schedule: String,
    pub epochs: usize,
    pub accuracy: f64,
    pub min_class_recall: f64,
    pub max_class_recall: f64,
    pub recall_spearman: f64,
    pub pseudo_kept_fraction: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassRow {
    pub run_id: String,
    pub stage: String,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub labeled_sampler: String,
    pub unlabeled_sampler: String,
    pub q: f64,
    pub schedule: String,
    pub epoch: usize,
    pub class: usize,
    pub recall: f64,
    pub precision: f64,
    pub pseudo_accuracy: f64,
    /// Pseudo labels of this class that passed the filter during the epoch.
    pub pseudo_kept: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub run_id: String,
    pub stage: String,
    pub seed: u64,
    pub lambda: f64,
    pub beta: f64,
    pub status: String,
    pub message: String,
}

/// How a run is labelled in the CSV columns.
#[derive(Clone, Debug, PartialEq)]
pub struct RunLabels {
    pub labeled_sampler: String,
    pub unlabeled_sampler: String,
    pub schedule: String,
}

impl RunLabels {
    pub fn from_record(record: &RunRecord) -> Self {
        match record.config.bis {
            Some(bis) => Self {
                labeled_sampler: bis.sampler_a.to_string(),
                unlabeled_sampler: bis.sampler_b.to_string(),
                schedule: bis.schedule.to_string(),
            },
            None => Self {
                labeled_sampler: record.config.labeled_sampler.to_string(),
                unlabeled_sampler: record.config.unlabeled_sampler.to_string(),
                schedule: NONE.to_string(),
            },
        }
    }
}

pub fn summary_row(record: &RunRecord, labels: &RunLabels) -> SummaryRow {
    let m = record.final_metrics.as_ref();
    let nan = f64::NAN;
    SummaryRow {
        run_id: record.run_id.clone(),
        stage: record.stage.to_string(),
        seed: record.seed,
        lambda: record.data.lambda,
        beta: record.data.beta,
        labeled_sampler: labels.labeled_sampler.clone(),
        unlabeled_sampler: labels.unlabeled_sampler.clone(),
        q: record.config.q,
        schedule: labels.schedule.clone(),
        epochs: record.config.epochs,
        accuracy: m.map_or(nan, |m| m.balanced_accuracy),
        min_class_recall: m.map_or(nan, |m| m.min_class_recall()),
        max_class_recall: m.map_or(nan, |m| m.max_class_recall()),
        recall_spearman: m.map_or(nan, |m| m.recall_spearman),
        pseudo_kept_fraction: m.map_or(nan, |m| m.pseudo_kept_fraction),
        wall_seconds: record.wall_seconds,
    }
}

pub fn per_class_rows(record: &RunRecord, labels: &RunLabels) -> Vec<PerClassRow> {
    let mut rows = Vec::new();
    for e in &record.history {
        let m = &e.metrics;
        for class in 0..m.per_class_recall.len() {
            rows.push(PerClassRow {
                run_id: record.run_id.clone(),
                stage: record.stage.to_string(),
                seed: record.seed,
                lambda: record.data.lambda,
                beta: record.data.beta,
                labeled_sampler: labels.labeled_sampler.clone(),
                unlabeled_sampler: labels.unlabeled_sampler.clone(),
                q: record.config.q,
                schedule: labels.schedule.clone(),
                epoch: e.epoch,
                class,
                recall: m.per_class_recall[class],
                precision: m.per_class_precision[class],
                pseudo_accuracy: m.pseudo_accuracy_per_class[class],
                pseudo_kept: m.pseudo_class_histogram[class],
            });
        }
    }
    rows
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

pub fn write_rows<T: Keyed + Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("csv.tmp");
    {
        let mut writer = csv::Writer::from_path(&tmp)?;
        if rows.is_empty() {
            // An empty file still carries the header.
            writer.write_record(T::HEADER)?;
        }
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 16] = [
    "run_id",
    "stage",
    "seed",
    "lambda",
    "beta",
    "labeled_sampler",
    "unlabeled_sampler",
    "q",
    "schedule",
    "epochs",
    "accuracy",
    "min_class_recall",
    "max_class_recall",
    "recall_spearman",
    "pseudo_kept_fraction",
    "wall_seconds",
];

const PER_CLASS_HEADER: [&str; 15] = [
    "run_id",
    "stage",
    "seed",
    "lambda",
    "beta",
    "labeled_sampler",
    "unlabeled_sampler",
    "q",
    "schedule",
    "epoch",
    "class",
    "recall",
    "precision",
    "pseudo_accuracy",
    "pseudo_kept",
];

const FAILURE_HEADER: [&str; 7] = ["run_id", "stage", "seed", "lambda", "beta", "status", "message"];

/// Row types of the harness CSV files, merged by run id.
pub trait Keyed {
    const HEADER: &'static [&'static str];
    fn run_id(&self) -> &str;
    /// Ordering within one run.
    fn sub_key(&self) -> (usize, usize) {
        (0, 0)
    }
}

impl Keyed for SummaryRow {
    const HEADER: &'static [&'static str] = &SUMMARY_HEADER;
    fn run_id(&self) -> &str {
        &self.run_id
    }
}

impl Keyed for PerClassRow {
    const HEADER: &'static [&'static str] = &PER_CLASS_HEADER;
    fn run_id(&self) -> &str {
        &self.run_id
    }
    fn sub_key(&self) -> (usize, usize) {
        (self.epoch, self.class)
    }
}

impl Keyed for FailureRow {
    const HEADER: &'static [&'static str] = &FAILURE_HEADER;
    fn run_id(&self) -> &str {
        &self.run_id
    }
}

/// Replaces the rows of every run id present in `new`, keeps the rest, and
/// rewrites `path` sorted by run id.
pub fn merge_rows<T>(path: &Path, new: Vec<T>) -> Result<Vec<T>>
where
    T: Keyed + Serialize + DeserializeOwned,
{
    merge_and_drop(path, new, &[])
}

/// Like [`merge_rows`], also dropping rows whose run id is in `drop`.
pub fn merge_and_drop<T>(path: &Path, new: Vec<T>, drop: &[String]) -> Result<Vec<T>>
where
    T: Keyed + Serialize + DeserializeOwned,
{
    let replaced: std::collections::BTreeSet<String> = new
        .iter()
        .map(|r| r.run_id().to_string())
        .chain(drop.iter().cloned())
        .collect();
    let mut by_key: BTreeMap<(String, (usize, usize), usize), T> = BTreeMap::new();
    let old = read_rows::<T>(path)?;
    let kept_old = old.into_iter().filter(|r| !replaced.contains(r.run_id()));
    for (i, row) in kept_old.chain(new).enumerate() {
        by_key.insert((row.run_id().to_string(), row.sub_key(), i), row);
    }
    let rows: Vec<T> = by_key.into_values().collect();
    write_rows(path, &rows)?;
    Ok(rows)
}
