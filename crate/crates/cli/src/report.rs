//! Mean ± sd over seeds for each configuration of a summary CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvio::{read_rows, SummaryRow};
use crate::error::{CliError, Result};

/// Metrics aggregated by [`aggregate`], in column order.
pub const METRICS: [&str; 5] = [
    "accuracy",
    "min_class_recall",
    "max_class_recall",
    "recall_spearman",
    "pseudo_kept_fraction",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub stage: String,
    pub lambda: f64,
    pub beta: f64,
    pub labeled_sampler: String,
    pub unlabeled_sampler: String,
    pub q: f64,
    pub schedule: String,
    pub epochs: usize,
    pub n: usize,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub min_class_recall_mean: f64,
    pub min_class_recall_sd: f64,
    pub max_class_recall_mean: f64,
    pub max_class_recall_sd: f64,
    pub recall_spearman_mean: f64,
    pub recall_spearman_sd: f64,
    pub pseudo_kept_fraction_mean: f64,
    pub pseudo_kept_fraction_sd: f64,
}

/// Mean and sample standard deviation; a single value has sd 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

type GroupKey = (String, u64, u64, String, String, u64, String, usize);

fn key_of(r: &SummaryRow) -> GroupKey {
    (
        r.stage.clone(),
        r.lambda.to_bits(),
        r.beta.to_bits(),
        r.labeled_sampler.clone(),
        r.unlabeled_sampler.clone(),
        r.q.to_bits(),
        r.schedule.clone(),
        r.epochs,
    )
}

pub fn aggregate(rows: &[SummaryRow]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(key_of(r)).or_default().push(r);
    }
    let mut out: Vec<ReportRow> = groups
        .into_values()
        .map(|g| {
            let stat = |f: fn(&SummaryRow) -> f64| mean_sd(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let first = g[0];
            let (acc_m, acc_s) = stat(|r| r.accuracy);
            let (min_m, min_s) = stat(|r| r.min_class_recall);
            let (max_m, max_s) = stat(|r| r.max_class_recall);
            let (rho_m, rho_s) = stat(|r| r.recall_spearman);
            let (kept_m, kept_s) = stat(|r| r.pseudo_kept_fraction);
            ReportRow {
                stage: first.stage.clone(),
                lambda: first.lambda,
                beta: first.beta,
                labeled_sampler: first.labeled_sampler.clone(),
                unlabeled_sampler: first.unlabeled_sampler.clone(),
                q: first.q,
                schedule: first.schedule.clone(),
                epochs: first.epochs,
                n: g.len(),
                accuracy_mean: acc_m,
                accuracy_sd: acc_s,
                min_class_recall_mean: min_m,
                min_class_recall_sd: min_s,
                max_class_recall_mean: max_m,
                max_class_recall_sd: max_s,
                recall_spearman_mean: rho_m,
                recall_spearman_sd: rho_s,
                pseudo_kept_fraction_mean: kept_m,
                pseudo_kept_fraction_sd: kept_s,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.stage.as_str(), a.lambda, a.beta, a.q)
            .partial_cmp(&(b.stage.as_str(), b.lambda, b.beta, b.q))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                (&a.labeled_sampler, &a.unlabeled_sampler, &a.schedule).cmp(&(
                    &b.labeled_sampler,
                    &b.unlabeled_sampler,
                    &b.schedule,
                ))
            })
            .then(a.epochs.cmp(&b.epochs))
    });
    out
}

/// Reads a summary CSV and aggregates it. No data rows is an error.
pub fn load_and_aggregate(path: &Path) -> Result<Vec<ReportRow>> {
    if !path.exists() {
        return Err(CliError::Runtime(format!("{} does not exist", path.display())));
    }
    let rows: Vec<SummaryRow> = read_rows(path)?;
    if rows.is_empty() {
        return Err(CliError::Runtime(format!(
            "{} has no result rows to report",
            path.display()
        )));
    }
    Ok(aggregate(&rows))
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Aligned plain-text table, accuracies in percent.
pub fn render_text(rows: &[ReportRow]) -> String {
    let header = [
        "stage",
        "lambda",
        "beta",
        "labeled",
        "unlabeled",
        "q",
        "schedule",
        "epochs",
        "n",
        "acc %",
        "min rec %",
        "max rec %",
        "rho_recall",
        "kept",
    ];
    let pm = |m: f64, s: f64, scale: f64, digits: usize| format!("{:.digits$} ± {:.digits$}", m * scale, s * scale);
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.stage.clone(),
                r.lambda.to_string(),
                r.beta.to_string(),
                r.labeled_sampler.clone(),
                r.unlabeled_sampler.clone(),
                format!("{:.4}", r.q),
                r.schedule.clone(),
                r.epochs.to_string(),
                r.n.to_string(),
                pm(r.accuracy_mean, r.accuracy_sd, 100.0, 2),
                pm(r.min_class_recall_mean, r.min_class_recall_sd, 100.0, 2),
                pm(r.max_class_recall_mean, r.max_class_recall_sd, 100.0, 2),
                pm(r.recall_spearman_mean, r.recall_spearman_sd, 1.0, 3),
                pm(r.pseudo_kept_fraction_mean, r.pseudo_kept_fraction_sd, 1.0, 3),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in &table {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}
