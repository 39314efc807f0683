//! Serializable record of one training run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::LongTailSpec;
use crate::error::{invalid, Error, Result};
use crate::eval::MetricsReport;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Joint,
    Finetune,
    Bis,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Joint => "joint",
            Stage::Finetune => "finetune",
            Stage::Bis => "bis",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Stage::Joint),
            "finetune" => Ok(Stage::Finetune),
            "bis" => Ok(Stage::Bis),
            other => Err(invalid(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Blend weight in effect, for BiS runs.
    pub alpha: Option<f64>,
    /// Class probabilities used for labeled batches this epoch.
    pub labeled_probs: Vec<f64>,
    /// Classes actually drawn for labeled batches this epoch.
    pub labeled_class_draws: Vec<u64>,
    pub mean_loss: f64,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub stage: Stage,
    pub seed: u64,
    pub data_seed: u64,
    pub data: LongTailSpec,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub final_metrics: Option<MetricsReport>,
    /// Hash of the feature extractor when the stage started (fine-tuning).
    pub feature_hash_before: Option<String>,
    pub feature_hash: String,
    pub parameter_hash: String,
    /// Excluded from the JSON so that repeated runs serialize identically.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
