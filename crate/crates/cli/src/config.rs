//! Experiment configuration.
//!
//! Files are flat `key = value` text grouped under section headers
//! (`[data]`, `[train]`, `[bis]`, `[finetune]`, `[grid]`), parsed as TOML.
//! Any key can be overridden from the command line with
//! `--set section.key=value`. Unknown sections or keys are errors.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use bislab_core::data::LongTailSpec;
use bislab_core::sampling::{SamplerKind, ScheduleKind};
use bislab_core::trainer::{BisConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// A `labeled/unlabeled` sampler pair such as `random/mean`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SamplerPair {
    pub labeled: SamplerKind,
    pub unlabeled: SamplerKind,
}

impl SamplerPair {
    pub fn new(labeled: SamplerKind, unlabeled: SamplerKind) -> Self {
        Self { labeled, unlabeled }
    }

    /// The nine combinations of the three base samplers.
    pub fn all() -> Vec<SamplerPair> {
        SamplerKind::ALL
            .iter()
            .flat_map(|&l| SamplerKind::ALL.iter().map(move |&u| SamplerPair::new(l, u)))
            .collect()
    }
}

impl fmt::Display for SamplerPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.labeled, self.unlabeled)
    }
}

impl FromStr for SamplerPair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (l, u) = s
            .split_once('/')
            .ok_or_else(|| format!("sampler pair `{s}` must look like labeled/unlabeled"))?;
        Ok(Self {
            labeled: l.trim().parse().map_err(|e| format!("{e}"))?,
            unlabeled: u.trim().parse().map_err(|e| format!("{e}"))?,
        })
    }
}

impl TryFrom<String> for SamplerPair {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<SamplerPair> for String {
    fn from(p: SamplerPair) -> String {
        p.to_string()
    }
}

/// Classifier fine-tuning stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub labeled_sampler: SamplerKind,
    pub unlabeled_sampler: SamplerKind,
    /// Fine-tuning learning rate relative to `train.lr`.
    pub lr_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            labeled_sampler: SamplerKind::Mean,
            unlabeled_sampler: SamplerKind::Mean,
            lr_scale: 0.05,
        }
    }
}

impl FinetuneConfig {
    /// The training config for the fine-tune stage.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            labeled_sampler: self.labeled_sampler,
            unlabeled_sampler: self.unlabeled_sampler,
            finetune_lr_scale: self.lr_scale,
            bis: None,
            ..base.clone()
        }
    }
}

/// The experiment matrix for `grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    /// `(lambda, beta)` cells.
    pub cells: Vec<(f64, f64)>,
    /// Joint-training sampler pairs.
    pub pairs: Vec<SamplerPair>,
    /// BiS schedules, run with the `[bis]` sampler pair.
    pub schedules: Vec<ScheduleKind>,
    pub qs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Also fine-tune every joint model with the `[finetune]` settings.
    pub finetune: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        let cells = [5.0, 10.0, 20.0]
            .iter()
            .flat_map(|&l| [1.0, 2.0].map(move |b| (l, b)))
            .collect();
        Self {
            cells,
            pairs: SamplerPair::all(),
            schedules: Vec::new(),
            qs: vec![1.0 / 3.0],
            seeds: vec![0, 1, 2],
            finetune: false,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(config_err("grid.cells must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("grid.seeds must not be empty"));
        }
        if self.qs.is_empty() {
            return Err(config_err("grid.qs must not be empty"));
        }
        if self.pairs.is_empty() && self.schedules.is_empty() {
            return Err(config_err("grid needs at least one sampler pair or schedule"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: LongTailSpec,
    pub train: TrainConfig,
    pub bis: BisConfig,
    pub finetune: FinetuneConfig,
    pub grid: GridSpec,
}

impl RunConfig {
    /// Reads `path` (if any), applies `section.key=value` overrides in
    /// order, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => {
                std::fs::read_to_string(p).map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?
            }
            None => String::new(),
        };
        Self::from_text(&text, overrides)
    }

    pub fn from_text(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        self.finetune.train_config(&self.train).validate()?;
        self.grid.validate()
    }

    /// `train` with the `[bis]` schedule attached.
    pub fn bis_train_config(&self) -> TrainConfig {
        TrainConfig {
            bis: Some(self.bis),
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{entry}` must look like section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| config_err(format!("override key `{path}` must look like section.key")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let slot = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    match slot {
        toml::Value::Table(t) => {
            t.insert(key.to_string(), value);
            Ok(())
        }
        _ => Err(config_err(format!("`{section}` is not a section"))),
    }
}
