//! Test-set and pseudo-label metrics.

use serde::{Deserialize, Serialize};

use crate::data::LabeledSet;
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::model::MicroModel;

/// `k × k` counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(invalid("confusion matrix must be square"));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.k..(truth + 1) * self.k].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|j| self.get(j, j)).sum()
    }

    /// `trace / total`, 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.trace() as f64 / total as f64
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion(preds: &[usize], truths: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != truths.len() {
        return Err(invalid(format!(
            "{} predictions but {} true labels",
            preds.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= k || t >= k {
            return Err(invalid(format!("class ({t}, {p}) out of range for k = {k}")));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

/// Per-class `(precision, recall)`. A class that is never predicted gets
/// precision 0; a class with no true examples is an error.
pub fn precision_recall(cm: &ConfusionMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut precision = Vec::with_capacity(cm.k);
    let mut recall = Vec::with_capacity(cm.k);
    for j in 0..cm.k {
        let row = cm.row_sum(j);
        if row == 0 {
            return Err(invalid(format!("class {j} has no test examples; recall is undefined")));
        }
        let tp = cm.get(j, j) as f64;
        recall.push(tp / row as f64);
        let col = cm.col_sum(j);
        precision.push(if col == 0 { 0.0 } else { tp / col as f64 });
    }
    Ok((precision, recall))
}

/// Average ranks (1-based), ties sharing the mean of their positions.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation between class index `0..K` and `values`.
/// A constant vector gives 0.
pub fn trend_stats(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(invalid(format!("trend needs at least 3 classes, got {}", values.len())));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("trend values must not be NaN"));
    }
    let index: Vec<f64> = (1..=values.len()).map(|i| i as f64).collect();
    Ok(pearson(&index, &average_ranks(values)))
}

/// Outcome of pseudo-labeling one unlabeled sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    /// Row in the unlabeled set.
    pub index: usize,
    pub pseudo_label: usize,
    /// Max softmax probability on the weakly augmented input.
    pub confidence: f64,
    pub kept: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoDiagnostics {
    /// Kept records over all records.
    pub kept_fraction: f64,
    /// For each class `j`: of the kept records pseudo-labeled `j`, the
    /// fraction whose true label is `j` (0 when none were kept).
    pub accuracy_per_class: Vec<f64>,
    /// Kept records per pseudo label.
    pub class_histogram: Vec<u64>,
}

/// Joins pseudo-label records with the true labels of the unlabeled set.
/// This is the only place the true unlabeled labels are read.
pub fn pseudo_diagnostics(
    records: &[PseudoLabelRecord],
    hidden_labels: &[usize],
    k: usize,
) -> Result<PseudoDiagnostics> {
    let mut hist = vec![0u64; k];
    let mut correct = vec![0u64; k];
    let mut kept = 0usize;
    for r in records.iter().filter(|r| r.kept) {
        let truth = *hidden_labels
            .get(r.index)
            .ok_or_else(|| invalid(format!("record index {} outside the unlabeled set", r.index)))?;
        if r.pseudo_label >= k {
            return Err(invalid(format!("pseudo label {} out of range", r.pseudo_label)));
        }
        kept += 1;
        hist[r.pseudo_label] += 1;
        if truth == r.pseudo_label {
            correct[r.pseudo_label] += 1;
        }
    }
    let accuracy_per_class = correct
        .iter()
        .zip(&hist)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect();
    Ok(PseudoDiagnostics {
        kept_fraction: if records.is_empty() {
            0.0
        } else {
            kept as f64 / records.len() as f64
        },
        accuracy_per_class,
        class_histogram: hist,
    })
}

/// Everything reported per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Overall test accuracy; on a balanced test set this equals
    /// `balanced_accuracy`.
    pub accuracy: f64,
    /// Mean per-class recall.
    pub balanced_accuracy: f64,
    pub per_class_recall: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub recall_spearman: f64,
    pub precision_spearman: f64,
    pub confusion: Vec<Vec<u64>>,
    pub pseudo_kept_fraction: f64,
    pub pseudo_accuracy_per_class: Vec<f64>,
    pub pseudo_class_histogram: Vec<u64>,
}

impl MetricsReport {
    pub fn min_class_recall(&self) -> f64 {
        self.per_class_recall.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_class_recall(&self) -> f64 {
        self.per_class_recall.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Test-set part of a [`MetricsReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct TestMetrics {
    pub confusion: ConfusionMatrix,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

impl TestMetrics {
    pub fn balanced_accuracy(&self) -> f64 {
        self.recall.iter().sum::<f64>() / self.recall.len() as f64
    }
}

/// Predicts every test point (in parallel when `exec` allows) and tallies
/// the confusion matrix.
pub fn evaluate_test(model: &MicroModel, test: &LabeledSet, exec: Execution) -> Result<TestMetrics> {
    let points = test.points();
    let preds = exec
        .map_range(test.len(), |i| model.predict(points.row(i)).map(|(j, _)| j))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let confusion = confusion(&preds, test.labels(), test.num_classes())?;
    let (precision, recall) = precision_recall(&confusion)?;
    Ok(TestMetrics {
        confusion,
        precision,
        recall,
    })
}

pub fn build_report(test: &TestMetrics, pseudo: &PseudoDiagnostics) -> Result<MetricsReport> {
    let trend = |v: &[f64]| if v.len() >= 3 { trend_stats(v) } else { Ok(0.0) };
    Ok(MetricsReport {
        accuracy: test.confusion.accuracy(),
        balanced_accuracy: test.balanced_accuracy(),
        recall_spearman: trend(&test.recall)?,
        precision_spearman: trend(&test.precision)?,
        per_class_recall: test.recall.clone(),
        per_class_precision: test.precision.clone(),
        confusion: test.confusion.rows(),
        pseudo_kept_fraction: pseudo.kept_fraction,
        pseudo_accuracy_per_class: pseudo.accuracy_per_class.clone(),
        pseudo_class_histogram: pseudo.class_histogram.clone(),
    })
}
