//! Class-sampling distributions.
//!
//! A [`SamplerStrategy`] is a probability vector over classes. The three base
//! strategies are derived from per-class counts: `random` follows the data
//! (`N_j / ΣN`), `mean` is uniform (`1/K`), and `reverse` is proportional to
//! the reciprocal counts (`(1/N_j) / Σ(1/N_i)`). A blended strategy is the
//! convex combination `α·μ_A + (1 − α)·μ_B` of two strategies, with `α`
//! following one of the [`ScheduleKind`] decay rules over training epochs.
//!
//! Unlabeled samples are admitted with the keep probability `μ_j^q`
//! ([`keep_prob`]).

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `Σ μ_j = 1`.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Per-class sample counts `N_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(invalid(format!(
                "class counts need at least 2 classes, got {}",
                counts.len()
            )));
        }
        Ok(Self(counts))
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_non_increasing(&self) -> bool {
        self.0.windows(2).all(|w| w[0] >= w[1])
    }
}

impl std::ops::Index<usize> for ClassCounts {
    type Output = usize;

    fn index(&self, index: usize) -> &usize {
        &self.0[index]
    }
}

/// The base strategies that can be built from class counts alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Random,
    Mean,
    Reverse,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 3] = [SamplerKind::Random, SamplerKind::Mean, SamplerKind::Reverse];

    pub fn build(self, counts: &ClassCounts) -> Result<SamplerStrategy> {
        match self {
            SamplerKind::Random => random_probs(counts),
            SamplerKind::Mean => mean_probs(counts.num_classes()),
            SamplerKind::Reverse => reverse_probs(counts),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Random => "random",
            SamplerKind::Mean => "mean",
            SamplerKind::Reverse => "reverse",
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "mean" => Ok(SamplerKind::Mean),
            "reverse" => Ok(SamplerKind::Reverse),
            other => Err(invalid(format!(
                "unknown sampler `{other}` (expected random, mean or reverse)"
            ))),
        }
    }
}

/// Where a strategy's probabilities came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    Mean,
    Reverse,
    Blended,
    /// Built directly from a probability vector.
    Custom,
}

impl From<SamplerKind> for StrategyKind {
    fn from(kind: SamplerKind) -> Self {
        match kind {
            SamplerKind::Random => StrategyKind::Random,
            SamplerKind::Mean => StrategyKind::Mean,
            SamplerKind::Reverse => StrategyKind::Reverse,
        }
    }
}

/// A class-sampling probability vector `μ` with its cumulative table.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerStrategy {
    probs: Vec<f64>,
    cdf: Vec<f64>,
    kind: StrategyKind,
}

impl SamplerStrategy {
    /// Validates `probs` (each in `[0, 1]`, summing to 1 within
    /// [`SUM_TOLERANCE`]) and tags the result [`StrategyKind::Custom`].
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Self::with_kind(probs, StrategyKind::Custom)
    }

    fn with_kind(probs: Vec<f64>, kind: StrategyKind) -> Result<Self> {
        if probs.len() < 2 {
            return Err(invalid("a strategy needs at least 2 classes"));
        }
        if let Some((j, p)) = probs.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("probability {p} for class {j} is outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(invalid(format!("probabilities sum to {sum}, not 1")));
        }
        let cdf = probs
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(Self { probs, cdf, kind })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    /// Inverse-CDF categorical draw. Returns the lowest class `j` with
    /// `u < cdf[j]` for `u ~ U[0, 1)`, so zero-probability classes are never
    /// drawn.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let j = self.cdf.partition_point(|&c| c <= u);
        if j < self.probs.len() {
            j
        } else {
            // u landed above a cdf total that rounded slightly below 1.
            self.probs
                .iter()
                .rposition(|&p| p > 0.0)
                .expect("a valid strategy has a positive entry")
        }
    }
}

/// `μ_j = N_j / Σ N_i`.
pub fn random_probs(counts: &ClassCounts) -> Result<SamplerStrategy> {
    let total = counts.total();
    if total == 0 {
        return Err(invalid("random sampling needs at least one non-zero count"));
    }
    let total = total as f64;
    let probs = counts.as_slice().iter().map(|&n| n as f64 / total).collect();
    SamplerStrategy::with_kind(probs, StrategyKind::Random)
}

/// `μ_j = 1 / K`.
pub fn mean_probs(k: usize) -> Result<SamplerStrategy> {
    if k < 2 {
        return Err(invalid(format!("mean sampling needs k >= 2, got {k}")));
    }
    SamplerStrategy::with_kind(vec![1.0 / k as f64; k], StrategyKind::Mean)
}

/// `μ_j = (1/N_j) / Σ (1/N_i)`.
pub fn reverse_probs(counts: &ClassCounts) -> Result<SamplerStrategy> {
    if let Some(j) = counts.as_slice().iter().position(|&n| n == 0) {
        return Err(invalid(format!(
            "reverse sampling is undefined for class {j} with zero samples"
        )));
    }
    let inv: Vec<f64> = counts.as_slice().iter().map(|&n| 1.0 / n as f64).collect();
    let norm: f64 = inv.iter().sum();
    let probs = inv.into_iter().map(|v| v / norm).collect();
    SamplerStrategy::with_kind(probs, StrategyKind::Reverse)
}

/// Re-sampling strength for unlabeled data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeepProbConfig {
    q: f64,
}

impl KeepProbConfig {
    pub fn new(q: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(invalid(format!("keep exponent q must be finite and >= 0, got {q}")));
        }
        Ok(Self { q })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
}

/// Probability `μ_j^q` that a threshold-passing pseudo-labeled sample of
/// class `j` is kept. `0^0` is 1.
pub fn keep_prob(mu_j: f64, cfg: KeepProbConfig) -> f64 {
    debug_assert!((0.0..=1.0).contains(&mu_j), "mu_j = {mu_j} outside [0, 1]");
    if cfg.q == 0.0 {
        1.0
    } else {
        mu_j.powf(cfg.q)
    }
}

/// `μ_j = α·μ_Aj + (1 − α)·μ_Bj`.
pub fn bis_blend(alpha: f64, a: &SamplerStrategy, b: &SamplerStrategy) -> Result<SamplerStrategy> {
    if a.num_classes() != b.num_classes() {
        return Err(invalid(format!(
            "cannot blend strategies over {} and {} classes",
            a.num_classes(),
            b.num_classes()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("blend weight alpha = {alpha} outside [0, 1]")));
    }
    let probs = a
        .probs
        .iter()
        .zip(&b.probs)
        .map(|(pa, pb)| alpha * pa + (1.0 - alpha) * pb)
        .collect();
    SamplerStrategy::with_kind(probs, StrategyKind::Blended)
}

/// Decay rule for the blend weight `α` over training epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `α = 0.5` throughout.
    Equal,
    /// `α = 1 − T/T_max`.
    Linear,
    /// `α = cos(T/T_max · π/2)`.
    Cosine,
    /// `α = 1 − (T/T_max)²`.
    Parabolic,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [
        ScheduleKind::Equal,
        ScheduleKind::Linear,
        ScheduleKind::Cosine,
        ScheduleKind::Parabolic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Equal => "equal",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Parabolic => "parabolic",
        }
    }

    /// `α` at epoch `t` of `t_max`. Endpoints are exact for the decaying
    /// schedules: `α(0) = 1`, `α(t_max) = 0`.
    pub fn alpha(self, t: usize, t_max: usize) -> Result<f64> {
        if t_max == 0 {
            return Err(invalid("schedule length t_max must be positive"));
        }
        if t > t_max {
            return Err(invalid(format!("epoch {t} is past the schedule end {t_max}")));
        }
        if self == ScheduleKind::Equal {
            return Ok(0.5);
        }
        if t == 0 {
            return Ok(1.0);
        }
        if t == t_max {
            return Ok(0.0);
        }
        let x = t as f64 / t_max as f64;
        let alpha = match self {
            ScheduleKind::Equal => unreachable!(),
            ScheduleKind::Linear => 1.0 - x,
            ScheduleKind::Cosine => (x * FRAC_PI_2).cos(),
            ScheduleKind::Parabolic => 1.0 - x * x,
        };
        Ok(alpha.clamp(0.0, 1.0))
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal" => Ok(ScheduleKind::Equal),
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            "parabolic" => Ok(ScheduleKind::Parabolic),
            other => Err(invalid(format!(
                "unknown schedule `{other}` (expected equal, linear, cosine or parabolic)"
            ))),
        }
    }
}

/// Two strategies blended under a decaying weight.
#[derive(Clone, Debug, PartialEq)]
pub struct BisSchedule {
    kind: ScheduleKind,
    t_max: usize,
    sampler_a: SamplerStrategy,
    sampler_b: SamplerStrategy,
}

impl BisSchedule {
    pub fn new(
        kind: ScheduleKind,
        t_max: usize,
        sampler_a: SamplerStrategy,
        sampler_b: SamplerStrategy,
    ) -> Result<Self> {
        if t_max == 0 {
            return Err(invalid("schedule length t_max must be positive"));
        }
        if sampler_a.num_classes() != sampler_b.num_classes() {
            return Err(invalid("BiS samplers must cover the same classes"));
        }
        Ok(Self {
            kind,
            t_max,
            sampler_a,
            sampler_b,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn sampler_a(&self) -> &SamplerStrategy {
        &self.sampler_a
    }

    pub fn sampler_b(&self) -> &SamplerStrategy {
        &self.sampler_b
    }

    pub fn alpha_at(&self, t: usize) -> Result<f64> {
        self.kind.alpha(t, self.t_max)
    }

    /// The blended strategy in effect during epoch `t`.
    pub fn strategy_at(&self, t: usize) -> Result<SamplerStrategy> {
        bis_blend(self.alpha_at(t)?, &self.sampler_a, &self.sampler_b)
    }
}

/// Draws one class index from `strategy`.
pub fn draw_class<R: Rng + ?Sized>(strategy: &SamplerStrategy, rng: &mut R) -> usize {
    strategy.draw(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(v: &[usize]) -> ClassCounts {
        ClassCounts::new(v.to_vec()).unwrap()
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} != {expected:?}");
        }
    }

    #[test]
    fn random_probs_examples() {
        let s = random_probs(&counts(&[4, 2, 1, 1])).unwrap();
        assert_close(s.probs(), &[0.5, 0.25, 0.125, 0.125], 1e-12);
        assert_eq!(s.kind(), StrategyKind::Random);
        let s = random_probs(&counts(&[5, 5, 5])).unwrap();
        assert_close(s.probs(), &[1.0 / 3.0; 3], 1e-12);
        let s = random_probs(&counts(&[1500, 15])).unwrap();
        assert_close(s.probs(), &[100.0 / 101.0, 1.0 / 101.0], 1e-12);
    }

    #[test]
    fn random_probs_rejects_all_zero() {
        assert!(matches!(random_probs(&counts(&[0, 0, 0])), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn mean_probs_examples() {
        assert_close(mean_probs(10).unwrap().probs(), &[0.1; 10], 1e-15);
        assert_close(mean_probs(2).unwrap().probs(), &[0.5, 0.5], 0.0);
        assert_close(mean_probs(100).unwrap().probs(), &[0.01; 100], 1e-15);
        assert!(mean_probs(1).is_err());
        assert!(mean_probs(0).is_err());
    }

    #[test]
    fn reverse_probs_examples() {
        let s = reverse_probs(&counts(&[4, 2, 1, 1])).unwrap();
        assert_close(s.probs(), &[1.0 / 11.0, 2.0 / 11.0, 4.0 / 11.0, 4.0 / 11.0], 1e-12);
        let s = reverse_probs(&counts(&[9, 1])).unwrap();
        assert_close(s.probs(), &[0.1, 0.9], 1e-12);
        let s = reverse_probs(&counts(&[7, 7, 7, 7])).unwrap();
        assert_close(s.probs(), &[0.25; 4], 1e-12);
        assert!(reverse_probs(&counts(&[3, 0, 1])).is_err());
    }

    #[test]
    fn class_counts_need_two_classes() {
        assert!(ClassCounts::new(vec![3]).is_err());
        assert!(ClassCounts::new(vec![]).is_err());
    }

    #[test]
    fn keep_prob_examples() {
        let q = |q| KeepProbConfig::new(q).unwrap();
        assert_eq!(keep_prob(0.25, q(0.0)), 1.0);
        assert_eq!(keep_prob(0.25, q(1.0)), 0.25);
        assert!((keep_prob(0.125, q(1.0 / 3.0)) - 0.5).abs() < 1e-12);
        assert_eq!(keep_prob(0.0, q(0.0)), 1.0);
        assert_eq!(keep_prob(0.0, q(0.5)), 0.0);
        assert!(KeepProbConfig::new(-0.1).is_err());
        assert!(KeepProbConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn blend_examples() {
        let a = SamplerStrategy::from_probs(vec![0.9, 0.1]).unwrap();
        let b = SamplerStrategy::from_probs(vec![0.5, 0.5]).unwrap();
        assert_eq!(bis_blend(1.0, &a, &b).unwrap().probs(), a.probs());
        assert_eq!(bis_blend(0.0, &a, &b).unwrap().probs(), b.probs());
        let a = SamplerStrategy::from_probs(vec![0.8, 0.2]).unwrap();
        let b = SamplerStrategy::from_probs(vec![0.2, 0.8]).unwrap();
        let mid = bis_blend(0.5, &a, &b).unwrap();
        assert_close(mid.probs(), &[0.5, 0.5], 1e-15);
        assert_eq!(mid.kind(), StrategyKind::Blended);
    }

    #[test]
    fn blend_rejects_mismatch_and_bad_alpha() {
        let a = mean_probs(2).unwrap();
        let b = mean_probs(3).unwrap();
        assert!(bis_blend(0.5, &a, &b).is_err());
        assert!(bis_blend(1.5, &a, &a).is_err());
        assert!(bis_blend(f64::NAN, &a, &a).is_err());
    }

    #[test]
    fn schedule_examples() {
        let p = ScheduleKind::Parabolic;
        assert!((p.alpha(50, 100).unwrap() - 0.75).abs() < 1e-15);
        let c = ScheduleKind::Cosine.alpha(50, 100).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        for t in [0, 13, 77, 100] {
            assert_eq!(ScheduleKind::Equal.alpha(t, 100).unwrap(), 0.5);
        }
        assert_eq!(ScheduleKind::Linear.alpha(0, 100).unwrap(), 1.0);
        assert_eq!(ScheduleKind::Linear.alpha(100, 100).unwrap(), 0.0);
        assert_eq!(ScheduleKind::Cosine.alpha(100, 100).unwrap(), 0.0);
        assert!(ScheduleKind::Linear.alpha(101, 100).is_err());
        assert!(ScheduleKind::Linear.alpha(0, 0).is_err());
    }

    #[test]
    fn schedule_names_round_trip() {
        for kind in ScheduleKind::ALL {
            assert_eq!(kind.as_str().parse::<ScheduleKind>().unwrap(), kind);
        }
        for kind in SamplerKind::ALL {
            assert_eq!(kind.as_str().parse::<SamplerKind>().unwrap(), kind);
        }
        assert!("uniform".parse::<SamplerKind>().is_err());
    }

    #[test]
    fn bis_schedule_blends_per_epoch() {
        let a = random_probs(&counts(&[9, 1])).unwrap();
        let b = mean_probs(2).unwrap();
        let sched = BisSchedule::new(ScheduleKind::Parabolic, 4, a.clone(), b.clone()).unwrap();
        assert_eq!(sched.strategy_at(0).unwrap().probs(), a.probs());
        assert_eq!(sched.strategy_at(4).unwrap().probs(), b.probs());
        // alpha(2) = 0.75
        assert_close(sched.strategy_at(2).unwrap().probs(), &[0.8, 0.2], 1e-12);
        assert!(BisSchedule::new(ScheduleKind::Linear, 0, a, b).is_err());
    }

    #[test]
    fn draw_degenerate() {
        let s = SamplerStrategy::from_probs(vec![1.0, 0.0]).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(draw_class(&s, &mut rng), 0);
        }
        let s = SamplerStrategy::from_probs(vec![0.0, 0.0, 1.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!((0..1000).all(|_| s.draw(&mut rng) == 2));
    }

    fn frequencies(s: &SamplerStrategy, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hist = vec![0usize; s.num_classes()];
        for _ in 0..n {
            hist[s.draw(&mut rng)] += 1;
        }
        hist.into_iter().map(|c| c as f64 / n as f64).collect()
    }

    #[test]
    fn draw_frequencies_monte_carlo() {
        let even = mean_probs(2).unwrap();
        let f = frequencies(&even, 100_000, 1);
        assert!((f[0] - 0.5).abs() <= 0.01, "{f:?}");
        let rev = reverse_probs(&counts(&[9, 1])).unwrap();
        let f = frequencies(&rev, 100_000, 2);
        assert!((f[1] - 0.9).abs() <= 0.01, "{f:?}");
    }

    /// Upper 0.001 tail of the chi-square distribution, indexed by degrees
    /// of freedom (1..=9).
    const CHI2_CRIT_001: [f64; 9] = [10.828, 13.816, 16.266, 18.467, 20.515, 22.458, 24.322, 26.124, 27.877];

    #[test]
    fn draw_chi_square_goodness_of_fit() {
        let strategies = [
            random_probs(&counts(&[4, 2, 1, 1])).unwrap(),
            reverse_probs(&counts(&[1500, 899, 539, 323, 194, 116, 70, 42, 25, 15])).unwrap(),
            mean_probs(5).unwrap(),
        ];
        let n = 100_000;
        for (i, s) in strategies.iter().enumerate() {
            let f = frequencies(s, n, 100 + i as u64);
            let stat: f64 = f
                .iter()
                .zip(s.probs())
                .map(|(obs, p)| {
                    let e = p * n as f64;
                    let o = obs * n as f64;
                    (o - e).powi(2) / e
                })
                .sum();
            let crit = CHI2_CRIT_001[s.num_classes() - 2];
            assert!(stat < crit, "chi2 {stat} >= {crit} for {:?}", s.probs());
        }
    }

    fn count_vec() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5000, 2..12)
    }

    proptest! {
        #[test]
        fn strategies_are_distributions(c in count_vec()) {
            let c = ClassCounts::new(c).unwrap();
            for kind in SamplerKind::ALL {
                let s = kind.build(&c).unwrap();
                let sum: f64 = s.probs().iter().sum();
                prop_assert!((sum - 1.0).abs() <= SUM_TOLERANCE);
                prop_assert!(s.probs().iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn random_preserves_and_reverse_flips_order(c in count_vec()) {
            let cc = ClassCounts::new(c.clone()).unwrap();
            let r = random_probs(&cc).unwrap();
            let v = reverse_probs(&cc).unwrap();
            for i in 0..c.len() {
                for j in 0..c.len() {
                    if c[i] >= c[j] {
                        prop_assert!(r.prob(i) >= r.prob(j));
                        prop_assert!(v.prob(i) <= v.prob(j));
                    }
                }
            }
        }

        #[test]
        fn reverse_of_balanced_is_mean(n in 1usize..10_000, k in 2usize..50) {
            let v = reverse_probs(&ClassCounts::new(vec![n; k]).unwrap()).unwrap();
            let m = mean_probs(k).unwrap();
            for (a, b) in v.probs().iter().zip(m.probs()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn blend_is_bounded(c in count_vec(), alpha in 0.0f64..=1.0) {
            let cc = ClassCounts::new(c).unwrap();
            let a = random_probs(&cc).unwrap();
            let b = reverse_probs(&cc).unwrap();
            let m = bis_blend(alpha, &a, &b).unwrap();
            for j in 0..cc.num_classes() {
                let lo = a.prob(j).min(b.prob(j));
                let hi = a.prob(j).max(b.prob(j));
                prop_assert!(m.prob(j) >= lo - 1e-15 && m.prob(j) <= hi + 1e-15);
            }
            let one = bis_blend(1.0, &a, &b).unwrap();
            let zero = bis_blend(0.0, &a, &b).unwrap();
            prop_assert_eq!(one.probs(), a.probs());
            prop_assert_eq!(zero.probs(), b.probs());
        }

        #[test]
        fn keep_prob_non_increasing_in_q(mu in 0.0001f64..0.9999, q1 in 0.0f64..5.0, dq in 0.0f64..5.0) {
            let lo = keep_prob(mu, KeepProbConfig::new(q1).unwrap());
            let hi = keep_prob(mu, KeepProbConfig::new(q1 + dq).unwrap());
            prop_assert!(hi <= lo);
            prop_assert_eq!(keep_prob(mu, KeepProbConfig::new(0.0).unwrap()), 1.0);
        }
    }

    #[test]
    fn schedules_on_fine_grid() {
        let t_max = 1000;
        for kind in ScheduleKind::ALL {
            let alphas: Vec<f64> = (0..=t_max).map(|t| kind.alpha(t, t_max).unwrap()).collect();
            assert!(alphas.iter().all(|a| (0.0..=1.0).contains(a)));
            if kind != ScheduleKind::Equal {
                assert_eq!(alphas[0], 1.0);
                assert_eq!(alphas[t_max], 0.0);
                assert!(alphas.windows(2).all(|w| w[1] <= w[0]), "{kind} not monotone");
            }
        }
        for t in 1..t_max {
            let p = ScheduleKind::Parabolic.alpha(t, t_max).unwrap();
            let c = ScheduleKind::Cosine.alpha(t, t_max).unwrap();
            let l = ScheduleKind::Linear.alpha(t, t_max).unwrap();
            assert!(p >= c && c >= l, "ordering broken at t={t}: {p} {c} {l}");
        }
    }
}
