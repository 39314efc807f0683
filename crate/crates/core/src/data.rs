//! Long-tailed labeled/unlabeled splits over a synthetic Gaussian mixture.
//!
//! Class counts interpolate geometrically from the head count `n1` down to
//! `n1 / λ`; the unlabeled split keeps the same skew scaled by `β`. Test sets
//! are balanced.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::sampling::ClassCounts;

/// Declarative description of an imbalanced dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongTailSpec {
    pub k: usize,
    /// Labeled count of the head class.
    pub n1: usize,
    /// Imbalance ratio `N_1 / N_K`.
    pub lambda: f64,
    /// Unlabeled-to-labeled ratio `M / N`.
    pub beta: f64,
    pub dim: usize,
    /// Distance of each class mean from the origin.
    pub class_sep: f64,
    /// Within-class standard deviation.
    pub noise_sigma: f64,
    pub test_per_class: usize,
}

impl Default for LongTailSpec {
    fn default() -> Self {
        Self {
            k: 5,
            n1: 200,
            lambda: 20.0,
            beta: 2.0,
            dim: 32,
            class_sep: 2.0,
            noise_sigma: 0.5,
            test_per_class: 200,
        }
    }
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(self.lambda >= 1.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 1, got {}", self.lambda));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
            return bad(format!("class_sep must be > 0, got {}", self.class_sep));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.test_per_class == 0 {
            return bad("test_per_class must be >= 1".into());
        }
        tail_count(self.n1, self.lambda).map(|_| ())
    }

    pub fn labeled_counts(&self) -> Result<ClassCounts> {
        class_count_profile(self.k, self.n1, self.lambda)
    }

    pub fn unlabeled_counts(&self) -> Result<ClassCounts> {
        unlabeled_count_profile(&self.labeled_counts()?, self.beta)
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

fn tail_count(n1: usize, lambda: f64) -> Result<usize> {
    let tail = round_half_up(n1 as f64 / lambda);
    if tail < 1 {
        return Err(Error::InvalidSpec(format!(
            "tail class count round(n1 / lambda) = round({n1} / {lambda}) must be >= 1"
        )));
    }
    Ok(tail)
}

/// `counts[j] = round(n1 · λ^(−j/(k−1)))`, non-increasing from `n1` to
/// `round(n1/λ)`.
pub fn class_count_profile(k: usize, n1: usize, lambda: f64) -> Result<ClassCounts> {
    if k < 2 {
        return Err(Error::InvalidSpec(format!("k must be >= 2, got {k}")));
    }
    if !(lambda >= 1.0 && lambda.is_finite()) {
        return Err(Error::InvalidSpec(format!("lambda must be >= 1, got {lambda}")));
    }
    let tail = tail_count(n1, lambda)?;
    let counts = (0..k)
        .map(|j| match j {
            0 => n1,
            j if j == k - 1 => tail,
            j => {
                let exponent = -(j as f64) / (k - 1) as f64;
                round_half_up(n1 as f64 * lambda.powf(exponent)).max(1)
            }
        })
        .collect();
    ClassCounts::new(counts)
}

/// Scales each labeled count by `β`, rounding half up and clamping to 1.
pub fn unlabeled_count_profile(labeled: &ClassCounts, beta: f64) -> Result<ClassCounts> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidSpec(format!("beta must be > 0, got {beta}")));
    }
    let counts = labeled
        .as_slice()
        .iter()
        .map(|&n| round_half_up(n as f64 * beta).max(1))
        .collect();
    ClassCounts::new(counts)
}

/// Row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.dim, "row width");
        self.data.extend_from_slice(row);
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Labeled points with a per-class row index.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    points: Points,
    labels: Vec<usize>,
    per_class_index: Vec<Vec<usize>>,
}

impl LabeledSet {
    pub fn new(points: Points, labels: Vec<usize>, k: usize) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        let mut per_class_index = vec![Vec::new(); k];
        for (i, &y) in labels.iter().enumerate() {
            per_class_index
                .get_mut(y)
                .ok_or_else(|| Error::InvalidInput(format!("label {y} out of range for k = {k}")))?
                .push(i);
        }
        Ok(Self {
            points,
            labels,
            per_class_index,
        })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_index.len()
    }

    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.per_class_index[class]
    }

    pub fn class_counts(&self) -> Result<ClassCounts> {
        ClassCounts::new(self.per_class_index.iter().map(Vec::len).collect())
    }
}

/// Unlabeled points. The true labels are kept for evaluation only; training
/// code receives [`UnlabeledSet::points`].
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledSet {
    points: Points,
    hidden_labels: Vec<usize>,
}

impl UnlabeledSet {
    pub fn new(points: Points, hidden_labels: Vec<usize>) -> Result<Self> {
        if points.len() != hidden_labels.len() {
            return Err(Error::Shape(format!(
                "{} points but {} hidden labels",
                points.len(),
                hidden_labels.len()
            )));
        }
        Ok(Self { points, hidden_labels })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn hidden_labels(&self) -> &[usize] {
        &self.hidden_labels
    }

    pub fn hidden_labels_mut(&mut self) -> &mut [usize] {
        &mut self.hidden_labels
    }

    pub fn len(&self) -> usize {
        self.hidden_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden_labels.is_empty()
    }
}

/// One materialized dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: LongTailSpec,
    pub seed: u64,
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
}

fn gaussian_row<R: Rng>(rng: &mut R, mean: &[f64], sigma: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(mean.iter().map(|m| {
        let z: f64 = rng.sample(StandardNormal);
        m + sigma * z
    }));
}

fn class_means(spec: &LongTailSpec, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, Stream::DataMeans);
    (0..spec.k)
        .map(|_| loop {
            let v: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| spec.class_sep * x / norm).collect();
            }
        })
        .collect()
}

fn sample_split(means: &[Vec<f64>], counts: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> (Points, Vec<usize>) {
    let dim = means[0].len();
    let total = counts.iter().sum();
    let mut points = Points::with_capacity(dim, total);
    let mut labels = Vec::with_capacity(total);
    let mut row = Vec::with_capacity(dim);
    for (class, (&n, mean)) in counts.iter().zip(means).enumerate() {
        for _ in 0..n {
            gaussian_row(rng, mean, sigma, &mut row);
            points.push(&row);
            labels.push(class);
        }
    }
    (points, labels)
}

/// Materializes `spec` deterministically from `seed`. Means, labeled,
/// unlabeled and test points each use their own random stream.
pub fn make_synthetic(spec: &LongTailSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let labeled_counts = spec.labeled_counts()?;
    let unlabeled_counts = unlabeled_count_profile(&labeled_counts, spec.beta)?;
    let means = class_means(spec, seed);
    let sigma = spec.noise_sigma;

    let mut rng = stream_rng(seed, Stream::DataLabeled);
    let (points, labels) = sample_split(&means, labeled_counts.as_slice(), sigma, &mut rng);
    let labeled = LabeledSet::new(points, labels, spec.k)?;

    let mut rng = stream_rng(seed, Stream::DataUnlabeled);
    let (points, hidden) = sample_split(&means, unlabeled_counts.as_slice(), sigma, &mut rng);
    let unlabeled = UnlabeledSet::new(points, hidden)?;

    let mut rng = stream_rng(seed, Stream::DataTest);
    let test_counts = vec![spec.test_per_class; spec.k];
    let (points, labels) = sample_split(&means, &test_counts, sigma, &mut rng);
    let test = LabeledSet::new(points, labels, spec.k)?;

    Ok(Dataset {
        spec: spec.clone(),
        seed,
        labeled,
        unlabeled,
        test,
    })
}

/// Noise levels for the two input perturbations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    pub weak_sigma: f64,
    pub strong_sigma: f64,
    pub p_drop: f64,
}

impl Augment {
    pub fn new(weak_sigma: f64, strong_sigma: f64, p_drop: f64) -> Result<Self> {
        if !(weak_sigma >= 0.0 && strong_sigma >= 0.0 && (0.0..=1.0).contains(&p_drop)) {
            return Err(Error::Config(format!(
                "augmentation needs sigmas >= 0 and p_drop in [0, 1], got {weak_sigma}, {strong_sigma}, {p_drop}"
            )));
        }
        Ok(Self {
            weak_sigma,
            strong_sigma,
            p_drop,
        })
    }

    pub fn weak<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        weak_augment(x, self.weak_sigma, rng)
    }

    pub fn strong<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        strong_augment(x, self.strong_sigma, self.p_drop, rng)
    }
}

/// `x + N(0, σ_w²)` per coordinate.
pub fn weak_augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

/// `x + N(0, σ_s²)`, then each coordinate zeroed with probability `p_drop`.
pub fn strong_augment<R: Rng + ?Sized>(x: &[f64], sigma: f64, p_drop: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|v| {
            let z: f64 = rng.sample(StandardNormal);
            let dropped = rng.random::<f64>() < p_drop;
            if dropped {
                0.0
            } else {
                v + sigma * z
            }
        })
        .collect()
}

const DUMP_MAGIC: &str = "# bislab-dataset v1";

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl Dataset {
    /// Writes the dataset as text. Layout:
    ///
    /// ```text
    /// # bislab-dataset v1
    /// seed=<u64>
    /// k=<K>
    /// dim=<D>
    /// n1=.. lambda=.. beta=.. class_sep=.. noise_sigma=.. test_per_class=..  (one per line)
    /// labeled_counts=<c0,c1,...>
    /// unlabeled_counts=<...>
    /// test_counts=<...>
    /// split,label,x0,...,x{D-1}
    /// L,<label>,<features>      labeled rows
    /// U,<hidden label>,<...>    unlabeled rows
    /// T,<label>,<...>           test rows
    /// ```
    ///
    /// Floats use the shortest representation that parses back to the same
    /// `f64`, so a load reproduces every value exactly.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let s = &self.spec;
        let mut text = String::new();
        let counts = |per_class: Vec<usize>| join(&per_class);
        let hidden_counts = {
            let mut c = vec![0usize; s.k];
            for &y in self.unlabeled.hidden_labels() {
                c[y] += 1;
            }
            c
        };
        writeln!(text, "{DUMP_MAGIC}").unwrap();
        writeln!(text, "seed={}", self.seed).unwrap();
        writeln!(text, "k={}", s.k).unwrap();
        writeln!(text, "dim={}", s.dim).unwrap();
        writeln!(text, "n1={}", s.n1).unwrap();
        writeln!(text, "lambda={}", s.lambda).unwrap();
        writeln!(text, "beta={}", s.beta).unwrap();
        writeln!(text, "class_sep={}", s.class_sep).unwrap();
        writeln!(text, "noise_sigma={}", s.noise_sigma).unwrap();
        writeln!(text, "test_per_class={}", s.test_per_class).unwrap();
        writeln!(
            text,
            "labeled_counts={}",
            counts(self.labeled.per_class_index.iter().map(Vec::len).collect())
        )
        .unwrap();
        writeln!(text, "unlabeled_counts={}", counts(hidden_counts)).unwrap();
        writeln!(
            text,
            "test_counts={}",
            counts(self.test.per_class_index.iter().map(Vec::len).collect())
        )
        .unwrap();
        let cols: Vec<String> = (0..s.dim).map(|d| format!("x{d}")).collect();
        writeln!(text, "split,label,{}", cols.join(",")).unwrap();
        out.write_all(text.as_bytes())?;

        let mut line = String::new();
        let splits: [(&str, &Points, &[usize]); 3] = [
            ("L", self.labeled.points(), self.labeled.labels()),
            ("U", self.unlabeled.points(), self.unlabeled.hidden_labels()),
            ("T", self.test.points(), self.test.labels()),
        ];
        for (tag, points, labels) in splits {
            for (row, y) in points.rows().zip(labels) {
                line.clear();
                write!(line, "{tag},{y}").unwrap();
                for v in row {
                    write!(line, ",{v}").unwrap();
                }
                line.push('\n');
                out.write_all(line.as_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Format("unexpected end of dataset file".into()))
        };
        if next()? != DUMP_MAGIC {
            return Err(Error::Format("missing dataset header".into()));
        }
        let mut header = std::collections::HashMap::new();
        let columns = loop {
            let line = next()?;
            if line.starts_with("split,") {
                break line;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
            header.insert(key.to_string(), value.to_string());
        };
        fn field<T: std::str::FromStr>(header: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
            header
                .get(key)
                .ok_or_else(|| Error::Format(format!("header is missing `{key}`")))?
                .parse()
                .map_err(|_| Error::Format(format!("header field `{key}` does not parse")))
        }
        fn count_list(header: &std::collections::HashMap<String, String>, key: &str) -> Result<Vec<usize>> {
            let raw: String = field(header, key)?;
            raw.split(',')
                .map(|v| v.parse().map_err(|_| Error::Format(format!("bad count in `{key}`"))))
                .collect()
        }
        let spec = LongTailSpec {
            k: field(&header, "k")?,
            n1: field(&header, "n1")?,
            lambda: field(&header, "lambda")?,
            beta: field(&header, "beta")?,
            dim: field(&header, "dim")?,
            class_sep: field(&header, "class_sep")?,
            noise_sigma: field(&header, "noise_sigma")?,
            test_per_class: field(&header, "test_per_class")?,
        };
        let seed = field(&header, "seed")?;
        if columns.split(',').count() != spec.dim + 2 {
            return Err(Error::Format("column header does not match dim".into()));
        }

        let mut splits = [
            (Points::with_capacity(spec.dim, 0), Vec::new()),
            (Points::with_capacity(spec.dim, 0), Vec::new()),
            (Points::with_capacity(spec.dim, 0), Vec::new()),
        ];
        let mut row = Vec::with_capacity(spec.dim);
        for line in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let slot = match parts.next() {
                Some("L") => 0,
                Some("U") => 1,
                Some("T") => 2,
                other => return Err(Error::Format(format!("unknown split tag {other:?}"))),
            };
            let label: usize = parts
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad label in `{line}`")))?;
            if label >= spec.k {
                return Err(Error::Format(format!("label {label} out of range")));
            }
            row.clear();
            for v in parts {
                row.push(
                    v.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad feature `{v}`")))?,
                );
            }
            if row.len() != spec.dim {
                return Err(Error::Format(format!(
                    "row has {} features, expected {}",
                    row.len(),
                    spec.dim
                )));
            }
            splits[slot].0.push(&row);
            splits[slot].1.push(label);
        }
        let [(lp, ll), (up, ul), (tp, tl)] = splits;
        let dataset = Dataset {
            labeled: LabeledSet::new(lp, ll, spec.k)?,
            unlabeled: UnlabeledSet::new(up, ul)?,
            test: LabeledSet::new(tp, tl, spec.k)?,
            spec,
            seed,
        };
        let check = |key: &str, actual: Vec<usize>| -> Result<()> {
            if count_list(&header, key)? != actual {
                return Err(Error::Format(format!("`{key}` does not match the rows")));
            }
            Ok(())
        };
        check(
            "labeled_counts",
            dataset.labeled.per_class_index.iter().map(Vec::len).collect(),
        )?;
        let mut hidden = vec![0usize; dataset.spec.k];
        for &y in dataset.unlabeled.hidden_labels() {
            hidden[y] += 1;
        }
        check("unlabeled_counts", hidden)?;
        check(
            "test_counts",
            dataset.test.per_class_index.iter().map(Vec::len).collect(),
        )?;
        Ok(dataset)
    }
}
