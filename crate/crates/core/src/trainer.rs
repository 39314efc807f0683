//! Semi-supervised training loop: thresholded pseudo-labels on weakly
//! perturbed inputs, consistency loss on strongly perturbed ones.
//!
//! Three schemes share one loop:
//!
//! * joint training with a (labeled, unlabeled) sampler pair,
//! * classifier fine-tuning with the feature extractor frozen,
//! * Bi-Sampling, where both samplers are replaced each epoch by the blend
//!   `α(T)·μ_A + (1 − α(T))·μ_B`.
//!
//! Unlabeled samples whose confidence passes `tau` are kept with probability
//! `μ_ĵ^q`, where `ĵ` is the pseudo label and `μ` the unlabeled strategy.
//! Sampling strategies are built from the labeled class counts; the true
//! labels of the unlabeled split are only read by evaluation.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Augment, Dataset, LabeledSet, Points};
use crate::error::{Error, Result};
use crate::eval::{build_report, evaluate_test, pseudo_diagnostics, PseudoLabelRecord};
use crate::exec::Execution;
use crate::model::{Example, GradientBundle, MicroModel};
use crate::record::{EpochRecord, RunRecord, Stage};
use crate::rng::{stream_rng, Stream};
use crate::sampling::{
    keep_prob, BisSchedule, ClassCounts, KeepProbConfig, SamplerKind, SamplerStrategy, ScheduleKind,
};

/// Bi-Sampling setup: strategy `A` early, strategy `B` late.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisConfig {
    pub schedule: ScheduleKind,
    pub sampler_a: SamplerKind,
    pub sampler_b: SamplerKind,
}

impl Default for BisConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::Parabolic,
            sampler_a: SamplerKind::Random,
            sampler_b: SamplerKind::Mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Confidence threshold for pseudo labels.
    pub tau: f64,
    /// Weight of the unlabeled loss.
    pub lambda_u: f64,
    /// Keep-probability exponent.
    pub q: f64,
    pub lr: f64,
    pub hidden: usize,
    pub labeled_sampler: SamplerKind,
    pub unlabeled_sampler: SamplerKind,
    pub bis: Option<BisConfig>,
    /// Weak perturbation std, relative to the data's `noise_sigma`.
    pub weak_scale: f64,
    /// Strong perturbation std, relative to the data's `noise_sigma`.
    pub strong_scale: f64,
    pub p_drop: f64,
    /// Fine-tuning runs at `lr · finetune_lr_scale`.
    pub finetune_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            steps_per_epoch: 200,
            batch_labeled: 64,
            batch_unlabeled: 64,
            tau: 0.95,
            lambda_u: 1.0,
            q: 1.0 / 3.0,
            lr: 0.05,
            hidden: 64,
            labeled_sampler: SamplerKind::Random,
            unlabeled_sampler: SamplerKind::Random,
            bis: None,
            weak_scale: 0.05,
            strong_scale: 0.5,
            p_drop: 0.1,
            finetune_lr_scale: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return bad(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad(format!("q must be >= 0, got {}", self.q));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.finetune_lr_scale > 0.0 && self.finetune_lr_scale.is_finite()) {
            return bad(format!("finetune_lr_scale must be > 0, got {}", self.finetune_lr_scale));
        }
        if self.hidden == 0 || self.batch_labeled == 0 || self.steps_per_epoch == 0 {
            return bad("hidden, batch_labeled and steps_per_epoch must be >= 1".into());
        }
        if self.batch_unlabeled == 0 && self.lambda_u > 0.0 {
            return bad("batch_unlabeled must be >= 1 when lambda_u > 0".into());
        }
        Augment::new(self.weak_scale, self.strong_scale, self.p_drop)?;
        Ok(())
    }

    fn augment(&self, noise_sigma: f64) -> Augment {
        Augment {
            weak_sigma: self.weak_scale * noise_sigma,
            strong_sigma: self.strong_scale * noise_sigma,
            p_drop: self.p_drop,
        }
    }

    fn keep(&self) -> Result<KeepProbConfig> {
        KeepProbConfig::new(self.q)
    }
}

/// Draws a labeled batch: class `j ~ μ`, then a uniform example of class `j`
/// (with replacement). Returns row indices into `labeled`.
pub fn labeled_batch<R: Rng + ?Sized>(
    strategy: &SamplerStrategy,
    labeled: &LabeledSet,
    rng: &mut R,
    size: usize,
) -> Vec<usize> {
    (0..size)
        .map(|_| {
            let rows = labeled.class_rows(strategy.draw(rng));
            rows[rng.random_range(0..rows.len())]
        })
        .collect()
}

/// Fails when `strategy` can draw a class with no labeled examples.
pub fn check_strategy_feasible(strategy: &SamplerStrategy, labeled: &LabeledSet) -> Result<()> {
    if strategy.num_classes() != labeled.num_classes() {
        return Err(Error::Config(format!(
            "strategy covers {} classes, labeled set has {}",
            strategy.num_classes(),
            labeled.num_classes()
        )));
    }
    for j in 0..strategy.num_classes() {
        if strategy.prob(j) > 0.0 && labeled.class_rows(j).is_empty() {
            return Err(Error::Config(format!(
                "class {j} has sampling probability {} but no labeled examples",
                strategy.prob(j)
            )));
        }
    }
    Ok(())
}

/// Pseudo-labeled part of one step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PseudoLabelBatch {
    pub records: Vec<PseudoLabelRecord>,
    /// Strongly perturbed input and pseudo label for each kept record.
    pub kept: Vec<(Vec<f64>, usize)>,
}

/// Pseudo-labels `indices` of `points`: predict on the weak perturbation,
/// keep when `confidence >= tau` and a `μ_ĵ^q` coin flip succeeds, and pair
/// each kept sample with a strong perturbation.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_label_step<R: Rng + ?Sized>(
    model: &MicroModel,
    points: &Points,
    indices: &[usize],
    strategy: &SamplerStrategy,
    keep: KeepProbConfig,
    tau: f64,
    augment: &Augment,
    rng: &mut R,
) -> Result<PseudoLabelBatch> {
    let mut batch = PseudoLabelBatch {
        records: Vec::with_capacity(indices.len()),
        kept: Vec::new(),
    };
    for &index in indices {
        let x = points.row(index);
        let weak = augment.weak(x, rng);
        let (pseudo_label, confidence) = model.predict(&weak)?;
        let kept = confidence >= tau && rng.random::<f64>() < keep_prob(strategy.prob(pseudo_label), keep);
        if kept {
            batch.kept.push((augment.strong(x, rng), pseudo_label));
        }
        batch.records.push(PseudoLabelRecord {
            index,
            pseudo_label,
            confidence,
            kept,
        });
    }
    Ok(batch)
}

struct EpochPlan {
    labeled: SamplerStrategy,
    unlabeled: SamplerStrategy,
    alpha: Option<f64>,
}

/// Runs the training schemes. Test-set evaluation after each epoch uses
/// `exec`; the optimization loop itself is sequential.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    exec: Execution,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            exec: Execution::best(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn initial_model(&self, data: &Dataset, seed: u64) -> Result<MicroModel> {
        let mut rng = stream_rng(seed, Stream::ModelInit);
        MicroModel::init(data.spec.dim, self.config.hidden, data.spec.k, &mut rng)
    }

    fn counts(data: &Dataset) -> Result<ClassCounts> {
        data.labeled.class_counts()
    }

    /// Joint training of extractor and classifier with the configured
    /// sampler pair.
    pub fn train_joint(&self, data: &Dataset, seed: u64) -> Result<(MicroModel, RunRecord)> {
        if self.config.bis.is_some() {
            return Err(Error::Config("joint training does not take a BiS schedule".into()));
        }
        let counts = Self::counts(data)?;
        let labeled = self.config.labeled_sampler.build(&counts)?;
        let unlabeled = self.config.unlabeled_sampler.build(&counts)?;
        let model = self.initial_model(data, seed)?;
        self.run(
            Stage::Joint,
            model,
            data,
            seed,
            self.config.lr,
            Stream::Training,
            |_| {
                Ok(EpochPlan {
                    labeled: labeled.clone(),
                    unlabeled: unlabeled.clone(),
                    alpha: None,
                })
            },
        )
    }

    /// Freezes the feature extractor of `model` and trains only the
    /// classifier, continuing from its current weights at
    /// `lr · finetune_lr_scale`.
    pub fn finetune_classifier(
        &self,
        model: &MicroModel,
        data: &Dataset,
        seed: u64,
    ) -> Result<(MicroModel, RunRecord)> {
        let counts = Self::counts(data)?;
        let labeled = self.config.labeled_sampler.build(&counts)?;
        let unlabeled = self.config.unlabeled_sampler.build(&counts)?;
        let mut model = model.clone();
        model.freeze_features();
        let before = model.feature_hash();
        let lr = self.config.lr * self.config.finetune_lr_scale;
        let (model, mut record) = self.run(Stage::Finetune, model, data, seed, lr, Stream::FineTune, |_| {
            Ok(EpochPlan {
                labeled: labeled.clone(),
                unlabeled: unlabeled.clone(),
                alpha: None,
            })
        })?;
        record.feature_hash_before = Some(before);
        Ok((model, record))
    }

    /// The schedule used by [`Trainer::train_bis`]. `α` reaches 0 in the last
    /// epoch: `t_max = max(epochs − 1, 1)`.
    pub fn bis_schedule(&self, data: &Dataset) -> Result<BisSchedule> {
        let bis = self
            .config
            .bis
            .ok_or_else(|| Error::Config("BiS training needs a [bis] schedule".into()))?;
        let counts = Self::counts(data)?;
        BisSchedule::new(
            bis.schedule,
            self.config.epochs.saturating_sub(1).max(1),
            bis.sampler_a.build(&counts)?,
            bis.sampler_b.build(&counts)?,
        )
    }

    /// End-to-end Bi-Sampling: each epoch both the labeled sampler and the
    /// base of the unlabeled keep probability are the blended strategy.
    pub fn train_bis(&self, data: &Dataset, seed: u64) -> Result<(MicroModel, RunRecord)> {
        let schedule = self.bis_schedule(data)?;
        let model = self.initial_model(data, seed)?;
        self.run(
            Stage::Bis,
            model,
            data,
            seed,
            self.config.lr,
            Stream::Training,
            |epoch| {
                let alpha = schedule.alpha_at(epoch.min(schedule.t_max()))?;
                let blended = crate::sampling::bis_blend(alpha, schedule.sampler_a(), schedule.sampler_b())?;
                Ok(EpochPlan {
                    labeled: blended.clone(),
                    unlabeled: blended,
                    alpha: Some(alpha),
                })
            },
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn run(
        &self,
        stage: Stage,
        mut model: MicroModel,
        data: &Dataset,
        seed: u64,
        lr: f64,
        stream: Stream,
        plan: impl Fn(usize) -> Result<EpochPlan>,
    ) -> Result<(MicroModel, RunRecord)> {
        let started = Instant::now();
        let cfg = &self.config;
        let k = data.spec.k;
        if model.dim() != data.spec.dim || model.num_classes() != k {
            return Err(Error::Shape("model does not match the dataset".into()));
        }
        let augment = cfg.augment(data.spec.noise_sigma);
        let keep = cfg.keep()?;
        let labeled = &data.labeled;
        // Training only ever sees the unlabeled points.
        let unlabeled: &Points = data.unlabeled.points();
        let use_unlabeled = cfg.lambda_u > 0.0 && cfg.batch_unlabeled > 0 && !unlabeled.is_empty();

        let mut rng = stream_rng(seed, stream);
        let mut history = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let plan = plan(epoch)?;
            check_strategy_feasible(&plan.labeled, labeled)?;
            let mut draws = vec![0u64; k];
            let mut records = Vec::new();
            let mut loss_sum = 0.0;
            for step in 0..cfg.steps_per_epoch {
                let rows = labeled_batch(&plan.labeled, labeled, &mut rng, cfg.batch_labeled);
                let batch: Vec<Example<'_>> = rows
                    .iter()
                    .map(|&r| {
                        let target = labeled.labels()[r];
                        draws[target] += 1;
                        Example {
                            x: labeled.points().row(r),
                            target,
                            weight: 1.0,
                        }
                    })
                    .collect();
                let (mut loss, mut grads) = model.loss_and_grad(&batch)?;

                if use_unlabeled {
                    let indices: Vec<usize> = (0..cfg.batch_unlabeled)
                        .map(|_| rng.random_range(0..unlabeled.len()))
                        .collect();
                    let pseudo = pseudo_label_step(
                        &model,
                        unlabeled,
                        &indices,
                        &plan.unlabeled,
                        keep,
                        cfg.tau,
                        &augment,
                        &mut rng,
                    )?;
                    // Rejected samples count toward the normalizer with weight 0.
                    let mut batch_u: Vec<Example<'_>> = pseudo
                        .kept
                        .iter()
                        .map(|(x, target)| Example {
                            x,
                            target: *target,
                            weight: 1.0,
                        })
                        .collect();
                    let filler = unlabeled.row(0);
                    batch_u.resize(
                        cfg.batch_unlabeled,
                        Example {
                            x: filler,
                            target: 0,
                            weight: 0.0,
                        },
                    );
                    let (loss_u, grads_u) = model.loss_and_grad(&batch_u)?;
                    loss += cfg.lambda_u * loss_u;
                    grads.add_scaled(&grads_u, cfg.lambda_u);
                    records.extend(pseudo.records);
                }

                if !loss.is_finite() || !grads_finite(&grads) {
                    return Err(diverged(epoch, step, &history));
                }
                model.apply_update(&grads, lr)?;
                if !model.is_finite() {
                    return Err(diverged(epoch, step, &history));
                }
                loss_sum += loss;
            }

            let test = evaluate_test(&model, &data.test, self.exec)?;
            let pseudo = pseudo_diagnostics(&records, data.unlabeled.hidden_labels(), k)?;
            history.push(EpochRecord {
                epoch,
                alpha: plan.alpha,
                labeled_probs: plan.labeled.probs().to_vec(),
                labeled_class_draws: draws,
                mean_loss: loss_sum / cfg.steps_per_epoch as f64,
                metrics: build_report(&test, &pseudo)?,
            });
        }

        let final_metrics = history.last().map(|e: &EpochRecord| e.metrics.clone());
        let record = RunRecord {
            run_id: format!("{stage}-s{seed}"),
            stage,
            seed,
            data_seed: data.seed,
            data: data.spec.clone(),
            config: self.config.clone(),
            history,
            final_metrics,
            feature_hash_before: None,
            feature_hash: model.feature_hash(),
            parameter_hash: model.parameter_hash(),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        Ok((model, record))
    }
}

fn grads_finite(g: &GradientBundle) -> bool {
    g.iter().all(|v| v.is_finite())
}

fn diverged(epoch: usize, step: usize, history: &[EpochRecord]) -> Error {
    Error::Diverged {
        epoch,
        step,
        last_finite_epoch: history.last().map(|e| e.epoch),
    }
}

/// Evaluates `model` on the test split with no pseudo-label diagnostics.
pub fn evaluate(model: &MicroModel, data: &Dataset, exec: Execution) -> Result<crate::eval::MetricsReport> {
    let test = evaluate_test(model, &data.test, exec)?;
    build_report(
        &test,
        &crate::eval::PseudoDiagnostics {
            kept_fraction: 0.0,
            accuracy_per_class: vec![0.0; data.spec.k],
            class_histogram: vec![0; data.spec.k],
        },
    )
}

/// [`Trainer::train_joint`] with default execution.
pub fn train_joint(config: &TrainConfig, data: &Dataset, seed: u64) -> Result<(MicroModel, RunRecord)> {
    Trainer::new(config.clone())?.train_joint(data, seed)
}

/// [`Trainer::finetune_classifier`] with default execution.
pub fn finetune_classifier(
    model: &MicroModel,
    config: &TrainConfig,
    data: &Dataset,
    seed: u64,
) -> Result<(MicroModel, RunRecord)> {
    Trainer::new(config.clone())?.finetune_classifier(model, data, seed)
}

/// [`Trainer::train_bis`] with default execution.
pub fn train_bis(config: &TrainConfig, data: &Dataset, seed: u64) -> Result<(MicroModel, RunRecord)> {
    Trainer::new(config.clone())?.train_bis(data, seed)
}
