//! Single runs and their on-disk outputs.

use std::fs;
use std::path::{Path, PathBuf};

use bislab_core::data::{make_synthetic, Dataset, LongTailSpec};
use bislab_core::exec::Execution;
use bislab_core::model::MicroModel;
use bislab_core::record::RunRecord;
use bislab_core::sampling::ScheduleKind;
use bislab_core::trainer::{BisConfig, TrainConfig, Trainer};

use crate::config::SamplerPair;
use crate::csvio::{
    merge_and_drop, per_class_rows, summary_row, FailureRow, RunLabels, FAILURES_FILE, PER_CLASS_FILE, SUMMARY_FILE,
};
use crate::error::Result;

/// Compact number for run ids: `20`, `1.5`, `0.3333`.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn cell_tag(lambda: f64, beta: f64) -> String {
    format!("l{}_b{}", fmt_num(lambda), fmt_num(beta))
}

pub fn joint_id(lambda: f64, beta: f64, pair: SamplerPair, q: f64, seed: u64) -> String {
    format!(
        "joint_{}_{}-{}_q{}_s{seed}",
        cell_tag(lambda, beta),
        pair.labeled,
        pair.unlabeled,
        fmt_num(q)
    )
}

/// Fine-tune runs are named after the joint run they start from.
pub fn finetune_id(joint_id: &str) -> String {
    match joint_id.strip_prefix("joint_") {
        Some(rest) => format!("finetune_{rest}"),
        None => format!("finetune_{joint_id}"),
    }
}

pub fn bis_id(lambda: f64, beta: f64, bis: &BisConfig, q: f64, seed: u64) -> String {
    format!(
        "bis_{}_{}-{}_{}_q{}_s{seed}",
        cell_tag(lambda, beta),
        bis.sampler_a,
        bis.sampler_b,
        bis.schedule,
        fmt_num(q)
    )
}

/// A finished run ready to be written out.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub labels: RunLabels,
    pub model: MicroModel,
}

impl RunOutput {
    pub fn new(record: RunRecord, model: MicroModel) -> Self {
        let labels = RunLabels::from_record(&record);
        Self { record, labels, model }
    }
}

/// Output directory layout.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn run_json(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.json"))
    }

    pub fn checkpoint(&self, run_id: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("{run_id}.ckpt"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join(SUMMARY_FILE)
    }

    pub fn per_class(&self) -> PathBuf {
        self.root.join(PER_CLASS_FILE)
    }

    pub fn failures(&self) -> PathBuf {
        self.root.join(FAILURES_FILE)
    }

    pub fn write_json(&self, out: &RunOutput) -> Result<PathBuf> {
        let path = self.run_json(&out.record.run_id);
        write_file(&path, out.record.to_json()?.as_bytes())?;
        Ok(path)
    }

    pub fn write_checkpoint(&self, out: &RunOutput) -> Result<PathBuf> {
        let path = self.checkpoint(&out.record.run_id);
        let mut buf = Vec::new();
        out.model.write_checkpoint(&mut buf)?;
        write_file(&path, &buf)?;
        Ok(path)
    }

    /// Merges the CSV rows of `outputs` and `failures` into the tables.
    /// Successful runs clear earlier failure rows with the same id.
    pub fn record_results(&self, outputs: &[RunOutput], failures: Vec<FailureRow>) -> Result<()> {
        let summary: Vec<_> = outputs.iter().map(|o| summary_row(&o.record, &o.labels)).collect();
        let per_class: Vec<_> = outputs
            .iter()
            .flat_map(|o| per_class_rows(&o.record, &o.labels))
            .collect();
        let succeeded: Vec<String> = outputs.iter().map(|o| o.record.run_id.clone()).collect();
        let failed: Vec<String> = failures.iter().map(|f| f.run_id.clone()).collect();
        merge_and_drop(&self.summary(), summary, &failed)?;
        merge_and_drop(&self.per_class(), per_class, &failed)?;
        if !failures.is_empty() || self.failures().exists() {
            merge_and_drop(&self.failures(), failures, &succeeded)?;
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// The dataset for one `(cell, seed)`: the run seed doubles as data seed.
pub fn dataset_for(base: &LongTailSpec, lambda: f64, beta: f64, seed: u64) -> Result<Dataset> {
    let spec = LongTailSpec {
        lambda,
        beta,
        ..base.clone()
    };
    Ok(make_synthetic(&spec, seed)?)
}

pub fn run_joint(
    config: &TrainConfig,
    pair: SamplerPair,
    data: &Dataset,
    seed: u64,
    exec: Execution,
) -> Result<RunOutput> {
    let cfg = TrainConfig {
        labeled_sampler: pair.labeled,
        unlabeled_sampler: pair.unlabeled,
        bis: None,
        ..config.clone()
    };
    let (model, mut record) = Trainer::new(cfg)?.with_execution(exec).train_joint(data, seed)?;
    record.run_id = joint_id(data.spec.lambda, data.spec.beta, pair, config.q, seed);
    Ok(RunOutput::new(record, model))
}

/// Fine-tunes `source`, labelling the row with the source's sampler pair so
/// the fine-tune delta can be read off per joint configuration.
pub fn run_finetune(
    ft_config: &TrainConfig,
    source: &RunOutput,
    data: &Dataset,
    seed: u64,
    exec: Execution,
) -> Result<RunOutput> {
    let (model, mut record) = Trainer::new(ft_config.clone())?
        .with_execution(exec)
        .finetune_classifier(&source.model, data, seed)?;
    record.run_id = finetune_id(&source.record.run_id);
    Ok(RunOutput {
        labels: source.labels.clone(),
        record,
        model,
    })
}

pub fn run_bis(config: &TrainConfig, bis: BisConfig, data: &Dataset, seed: u64, exec: Execution) -> Result<RunOutput> {
    let cfg = TrainConfig {
        bis: Some(bis),
        ..config.clone()
    };
    let (model, mut record) = Trainer::new(cfg)?.with_execution(exec).train_bis(data, seed)?;
    record.run_id = bis_id(data.spec.lambda, data.spec.beta, &bis, config.q, seed);
    Ok(RunOutput::new(record, model))
}

/// `bis` with the schedule replaced.
pub fn with_schedule(bis: BisConfig, schedule: ScheduleKind) -> BisConfig {
    BisConfig { schedule, ..bis }
}

/// Writes JSON (and optionally a checkpoint) and merges the CSV rows.
pub fn persist(out: &OutDir, outputs: &[RunOutput], checkpoints: bool) -> Result<()> {
    for o in outputs {
        out.write_json(o)?;
        if checkpoints {
            out.write_checkpoint(o)?;
        }
    }
    out.record_results(outputs, Vec::new())
}
