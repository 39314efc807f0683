use bislab_core::data::{make_synthetic, Augment, Dataset, LongTailSpec, Points};
use bislab_core::exec::Execution;
use bislab_core::model::MicroModel;
use bislab_core::rng::{stream_rng, Stream};
use bislab_core::sampling::{KeepProbConfig, SamplerKind, SamplerStrategy, ScheduleKind};
use bislab_core::trainer::{labeled_batch, pseudo_label_step, train_bis, train_joint, BisConfig, TrainConfig, Trainer};
use bislab_core::Error;

fn small_spec() -> LongTailSpec {
    LongTailSpec {
        n1: 60,
        lambda: 10.0,
        test_per_class: 40,
        ..LongTailSpec::default()
    }
}

fn short(labeled: SamplerKind, unlabeled: SamplerKind) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        steps_per_epoch: 20,
        batch_labeled: 16,
        batch_unlabeled: 16,
        hidden: 16,
        labeled_sampler: labeled,
        unlabeled_sampler: unlabeled,
        ..TrainConfig::default()
    }
}

fn data(seed: u64) -> Dataset {
    make_synthetic(&small_spec(), seed).unwrap()
}

/// A one-unit network that always predicts `class` with logit margin `margin`.
fn constant_model(k: usize, class: usize, margin: f64) -> MicroModel {
    let mut w2 = vec![0.0; k];
    w2[class] = margin;
    MicroModel::from_parts(2, vec![0.0, 0.0], vec![1.0], w2, vec![0.0; k]).unwrap()
}

fn noiseless() -> Augment {
    Augment::new(0.0, 0.0, 0.0).unwrap()
}

#[test]
fn labeled_batches_follow_the_class_distribution() {
    let d = data(0);
    let counts = d.labeled.class_counts().unwrap();
    for kind in SamplerKind::ALL {
        let strategy = kind.build(&counts).unwrap();
        let mut rng = stream_rng(1, Stream::Training);
        let rows = labeled_batch(&strategy, &d.labeled, &mut rng, 100_000);
        let mut freq = [0.0; 5];
        for r in rows {
            freq[d.labeled.labels()[r]] += 1.0 / 100_000.0;
        }
        for (j, f) in freq.iter().enumerate() {
            assert!(
                (f - strategy.prob(j)).abs() < 0.01,
                "{kind} class {j}: {f} vs {}",
                strategy.prob(j)
            );
        }
    }
}

#[test]
fn threshold_one_rejects_every_uncertain_prediction() {
    let model = constant_model(2, 0, 3.0);
    let points = Points::new(2, vec![0.0; 200]).unwrap();
    let indices: Vec<usize> = (0..100).collect();
    let strategy = SamplerStrategy::from_probs(vec![0.5, 0.5]).unwrap();
    let mut rng = stream_rng(0, Stream::Training);
    let out = pseudo_label_step(
        &model,
        &points,
        &indices,
        &strategy,
        KeepProbConfig::new(0.0).unwrap(),
        1.0,
        &noiseless(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.records.len(), 100);
    assert!(out.kept.is_empty());
    assert!(out
        .records
        .iter()
        .all(|r| !r.kept && r.pseudo_label == 0 && r.confidence < 1.0));
}

#[test]
fn zero_exponent_and_low_threshold_keep_everything() {
    let model = constant_model(3, 2, 0.1);
    let points = Points::new(2, (0..100).map(f64::from).collect()).unwrap();
    let indices: Vec<usize> = (0..50).collect();
    let strategy = SamplerStrategy::from_probs(vec![0.8, 0.15, 0.05]).unwrap();
    let mut rng = stream_rng(0, Stream::Training);
    let out = pseudo_label_step(
        &model,
        &points,
        &indices,
        &strategy,
        KeepProbConfig::new(0.0).unwrap(),
        1e-9,
        &noiseless(),
        &mut rng,
    )
    .unwrap();
    assert_eq!(out.kept.len(), 50);
    for (i, (x, label)) in out.kept.iter().enumerate() {
        assert_eq!(*label, 2);
        assert_eq!(x.as_slice(), points.row(i));
    }
}

#[test]
fn keep_rate_follows_class_probability_power() {
    // μ = 0.125 and q = 1/3 give a keep probability of exactly 1/2.
    let model = constant_model(2, 0, 50.0);
    let points = Points::new(2, vec![0.0; 2]).unwrap();
    let indices = vec![0usize; 10_000];
    let strategy = SamplerStrategy::from_probs(vec![0.125, 0.875]).unwrap();
    let rate = |q: f64| {
        let mut rng = stream_rng(9, Stream::Training);
        let out = pseudo_label_step(
            &model,
            &points,
            &indices,
            &strategy,
            KeepProbConfig::new(q).unwrap(),
            0.95,
            &noiseless(),
            &mut rng,
        )
        .unwrap();
        out.kept.len() as f64 / indices.len() as f64
    };
    assert!((rate(1.0 / 3.0) - 0.5).abs() <= 0.02);
    assert_eq!(rate(0.0), 1.0);
    assert!((rate(1.0) - 0.125).abs() <= 0.01);
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let d = data(1);
    let cfg = TrainConfig {
        epochs: 0,
        ..short(SamplerKind::Random, SamplerKind::Random)
    };
    let (a, rec) = train_joint(&cfg, &d, 3).unwrap();
    let (b, _) = train_joint(&cfg, &d, 3).unwrap();
    assert_eq!(a, b);
    assert!(rec.history.is_empty());
    assert!(rec.final_metrics.is_none());
    let mut rng = stream_rng(3, Stream::ModelInit);
    assert_eq!(a, MicroModel::init(d.spec.dim, cfg.hidden, d.spec.k, &mut rng).unwrap());
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let d = data(2);
    let cfg = TrainConfig {
        lr: 1e200,
        ..short(SamplerKind::Random, SamplerKind::Random)
    };
    match train_joint(&cfg, &d, 0) {
        Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let base = short(SamplerKind::Random, SamplerKind::Random);
    for bad in [
        TrainConfig {
            tau: 0.0,
            ..base.clone()
        },
        TrainConfig {
            tau: 1.1,
            ..base.clone()
        },
        TrainConfig {
            lr: 0.0,
            ..base.clone()
        },
        TrainConfig {
            q: -1.0,
            ..base.clone()
        },
        TrainConfig {
            lambda_u: -0.5,
            ..base.clone()
        },
        TrainConfig {
            p_drop: 1.5,
            ..base.clone()
        },
    ] {
        assert!(matches!(
            Trainer::new(bad),
            Err(Error::Config(_) | Error::InvalidInput(_))
        ));
    }
    let with_bis = TrainConfig {
        bis: Some(BisConfig::default()),
        ..base.clone()
    };
    assert!(train_joint(&with_bis, &data(0), 0).is_err());
    assert!(train_bis(&base, &data(0), 0).is_err());
}

#[test]
fn finetune_freezes_the_extractor() {
    let d = data(3);
    let (joint, joint_rec) = train_joint(&short(SamplerKind::Random, SamplerKind::Random), &d, 0).unwrap();
    let ft_cfg = TrainConfig {
        finetune_lr_scale: 1.0,
        ..short(SamplerKind::Mean, SamplerKind::Mean)
    };
    let (ft, rec) = Trainer::new(ft_cfg)
        .unwrap()
        .finetune_classifier(&joint, &d, 0)
        .unwrap();
    assert_eq!(ft.w1(), joint.w1());
    assert_eq!(ft.b1(), joint.b1());
    assert_ne!(ft.w2(), joint.w2());
    assert_eq!(
        rec.feature_hash_before.as_deref(),
        Some(joint_rec.feature_hash.as_str())
    );
    assert_eq!(rec.feature_hash, joint_rec.feature_hash);
    assert!(ft.features_frozen());
    assert!(!joint.features_frozen());
}

#[test]
fn zero_finetune_epochs_leave_the_model_unchanged() {
    let d = data(3);
    let (joint, _) = train_joint(&short(SamplerKind::Random, SamplerKind::Random), &d, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..short(SamplerKind::Mean, SamplerKind::Mean)
    };
    let (ft, _) = Trainer::new(cfg).unwrap().finetune_classifier(&joint, &d, 0).unwrap();
    assert_eq!(ft.parameter_hash(), joint.parameter_hash());
}

fn bis_config(schedule: ScheduleKind, a: SamplerKind, b: SamplerKind, epochs: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        steps_per_epoch: steps,
        bis: Some(BisConfig {
            schedule,
            sampler_a: a,
            sampler_b: b,
        }),
        ..short(SamplerKind::Random, SamplerKind::Random)
    }
}

#[test]
fn bis_starts_as_sampler_a_and_ends_as_sampler_b() {
    let d = data(4);
    let cfg = bis_config(ScheduleKind::Parabolic, SamplerKind::Random, SamplerKind::Mean, 4, 400);
    let (_, bis) = train_bis(&cfg, &d, 7).unwrap();
    let joint_cfg = TrainConfig {
        epochs: 1,
        bis: None,
        ..cfg.clone()
    };
    let (_, joint) = train_joint(&joint_cfg, &d, 7).unwrap();
    assert_eq!(bis.history[0].alpha, Some(1.0));
    assert_eq!(bis.history[0].labeled_class_draws, joint.history[0].labeled_class_draws);
    assert_eq!(bis.history[0].metrics, joint.history[0].metrics);

    let last = bis.history.last().unwrap();
    assert_eq!(last.alpha, Some(0.0));
    let total: u64 = last.labeled_class_draws.iter().sum();
    for &n in &last.labeled_class_draws {
        assert!(
            (n as f64 / total as f64 - 0.2).abs() < 0.02,
            "{:?}",
            last.labeled_class_draws
        );
    }
}

#[test]
fn bis_class_probabilities_move_monotonically() {
    let d = data(4);
    let cfg = bis_config(ScheduleKind::Cosine, SamplerKind::Random, SamplerKind::Reverse, 6, 2);
    let (_, rec) = train_bis(&cfg, &d, 0).unwrap();
    let k = d.spec.k;
    for j in 0..k {
        let series: Vec<f64> = rec.history.iter().map(|e| e.labeled_probs[j]).collect();
        let up = series.windows(2).all(|w| w[1] >= w[0]);
        let down = series.windows(2).all(|w| w[1] <= w[0]);
        assert!(up || down, "class {j}: {series:?}");
    }
}

#[test]
fn equal_schedule_over_identical_samplers_is_joint_training() {
    let d = data(5);
    let bis_cfg = bis_config(ScheduleKind::Equal, SamplerKind::Mean, SamplerKind::Mean, 3, 20);
    let joint_cfg = TrainConfig {
        bis: None,
        labeled_sampler: SamplerKind::Mean,
        unlabeled_sampler: SamplerKind::Mean,
        ..bis_cfg.clone()
    };
    let (a, ra) = train_bis(&bis_cfg, &d, 2).unwrap();
    let (b, rb) = train_joint(&joint_cfg, &d, 2).unwrap();
    assert_eq!(a, b);
    for (x, y) in ra.history.iter().zip(&rb.history) {
        assert_eq!(x.labeled_class_draws, y.labeled_class_draws);
        assert_eq!(x.metrics, y.metrics);
    }
}

#[test]
fn without_unlabeled_loss_the_unlabeled_split_is_ignored() {
    let spec = small_spec();
    let a = make_synthetic(
        &LongTailSpec {
            beta: 1.0,
            ..spec.clone()
        },
        6,
    )
    .unwrap();
    let b = make_synthetic(&LongTailSpec { beta: 3.0, ..spec }, 6).unwrap();
    assert_eq!(a.labeled, b.labeled);
    assert_ne!(a.unlabeled.len(), b.unlabeled.len());
    let cfg = TrainConfig {
        lambda_u: 0.0,
        ..short(SamplerKind::Random, SamplerKind::Mean)
    };
    let (ma, _) = train_joint(&cfg, &a, 1).unwrap();
    let (mb, _) = train_joint(&cfg, &b, 1).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn runs_are_deterministic() {
    let d = data(7);
    let cfg = bis_config(ScheduleKind::Linear, SamplerKind::Random, SamplerKind::Mean, 2, 20);
    let (_, a) = train_bis(&cfg, &d, 11).unwrap();
    let (_, b) = train_bis(&cfg, &d, 11).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let (_, c) = train_bis(&cfg, &d, 12).unwrap();
    assert_ne!(a.parameter_hash, c.parameter_hash);
}

#[test]
fn execution_mode_does_not_change_results() {
    let d = data(8);
    let cfg = short(SamplerKind::Reverse, SamplerKind::Random);
    let (_, a) = Trainer::new(cfg.clone())
        .unwrap()
        .with_execution(Execution::Sequential)
        .train_joint(&d, 0)
        .unwrap();
    let (_, b) = Trainer::new(cfg)
        .unwrap()
        .with_execution(Execution::Parallel)
        .train_joint(&d, 0)
        .unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn poisoned_hidden_labels_do_not_change_training() {
    let clean = data(9);
    let mut poisoned = clean.clone();
    let k = poisoned.spec.k;
    for y in poisoned.unlabeled.hidden_labels_mut() {
        *y = (*y + 1) % k;
    }
    let cfg = short(SamplerKind::Random, SamplerKind::Random);
    let (a, ra) = train_joint(&cfg, &clean, 0).unwrap();
    let (b, rb) = train_joint(&cfg, &poisoned, 0).unwrap();
    assert_eq!(a.parameter_hash(), b.parameter_hash());
    // Only the diagnostics that join on hidden labels may differ.
    let (ma, mb) = (ra.final_metrics.unwrap(), rb.final_metrics.unwrap());
    assert_eq!(ma.per_class_recall, mb.per_class_recall);
    assert_eq!(ma.pseudo_class_histogram, mb.pseudo_class_histogram);
}

#[test]
fn balanced_data_gives_balanced_recall() {
    let spec = LongTailSpec {
        lambda: 1.0,
        ..LongTailSpec::default()
    };
    let d = make_synthetic(&spec, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        steps_per_epoch: 100,
        ..TrainConfig::default()
    };
    let (_, rec) = train_joint(&cfg, &d, 0).unwrap();
    let m = rec.final_metrics.unwrap();
    let spread = m.max_class_recall() - m.min_class_recall();
    assert!(spread < 0.15, "recall spread {spread}: {:?}", m.per_class_recall);
}
