//! One-hidden-layer classifier split into a feature extractor
//! `h = ReLU(W1·x + b1)` and a linear classifier `z = W2·h + b2`.
//!
//! Gradients are computed analytically. Freezing the feature extractor makes
//! every later [`MicroModel::apply_update`] leave `W1` and `b1` untouched.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};

/// One training example for [`MicroModel::loss_and_grad`].
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub target: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MicroModel {
    dim: usize,
    hidden: usize,
    classes: usize,
    /// `hidden × dim`, row-major.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// `classes × hidden`, row-major.
    w2: Vec<f64>,
    b2: Vec<f64>,
    features_frozen: bool,
}

/// Gradients with the same shapes as the model parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBundle {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(model: &MicroModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        let pairs = [
            (&mut self.w1, &other.w1),
            (&mut self.b1, &other.b1),
            (&mut self.w2, &other.w2),
            (&mut self.b2, &other.b2),
        ];
        for (dst, src) in pairs {
            assert_eq!(dst.len(), src.len(), "gradient shapes differ");
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += scale * s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// In-place numerically stable softmax.
fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    z.iter_mut().for_each(|v| *v /= sum);
}

impl MicroModel {
    /// Uniform `(−s, s)` initialization with `s = 1/√fan_in` per layer.
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(dim, hidden, classes)?;
        let s1 = 1.0 / (dim as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mut fill = |v: &mut Vec<f64>, s: f64| v.iter_mut().for_each(|p| *p = rng.random_range(-s..s));
        fill(&mut model.w1, s1);
        fill(&mut model.b1, s1);
        fill(&mut model.w2, s2);
        fill(&mut model.b2, s2);
        Ok(model)
    }

    pub fn zeros(dim: usize, hidden: usize, classes: usize) -> Result<Self> {
        if dim == 0 || hidden == 0 || classes < 2 {
            return Err(invalid(format!(
                "model needs dim >= 1, hidden >= 1 and classes >= 2 (got {dim}, {hidden}, {classes})"
            )));
        }
        Ok(Self {
            dim,
            hidden,
            classes,
            w1: vec![0.0; hidden * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; classes * hidden],
            b2: vec![0.0; classes],
            features_frozen: false,
        })
    }

    /// Builds a model from explicit parameters (row-major `w1: hidden×dim`,
    /// `w2: classes×hidden`).
    pub fn from_parts(dim: usize, w1: Vec<f64>, b1: Vec<f64>, w2: Vec<f64>, b2: Vec<f64>) -> Result<Self> {
        let hidden = b1.len();
        let classes = b2.len();
        let mut model = Self::zeros(dim, hidden, classes)?;
        if w1.len() != hidden * dim || w2.len() != classes * hidden {
            return Err(Error::Shape(format!(
                "w1 has {} entries (want {}), w2 has {} (want {})",
                w1.len(),
                hidden * dim,
                w2.len(),
                classes * hidden
            )));
        }
        if w1.iter().chain(&b1).chain(&w2).chain(&b2).any(|v| !v.is_finite()) {
            return Err(invalid("model parameters must be finite"));
        }
        model.w1 = w1;
        model.b1 = b1;
        model.w2 = w2;
        model.b2 = b2;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn w1(&self) -> &[f64] {
        &self.w1
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn w2(&self) -> &[f64] {
        &self.w2
    }

    pub fn b2(&self) -> &[f64] {
        &self.b2
    }

    pub fn features_frozen(&self) -> bool {
        self.features_frozen
    }

    /// Freezes `W1` and `b1`. There is no way back.
    pub fn freeze_features(&mut self) {
        self.features_frozen = true;
    }

    /// All parameters in checkpoint order.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn features_into(&self, x: &[f64], out: &mut [f64]) {
        for (h, (row, b)) in out.iter_mut().zip(self.w1.chunks_exact(self.dim).zip(&self.b1)) {
            let pre: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b;
            *h = pre.max(0.0);
        }
    }

    fn logits_into(&self, h: &[f64], out: &mut [f64]) {
        for (z, (row, b)) in out.iter_mut().zip(self.w2.chunks_exact(self.hidden).zip(&self.b2)) {
            *z = row.iter().zip(h).map(|(w, v)| w * v).sum::<f64>() + b;
        }
    }

    /// Hidden representation `ReLU(W1·x + b1)`.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = vec![0.0; self.hidden];
        self.features_into(x, &mut h);
        Ok(h)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h = self.features(x)?;
        let mut z = vec![0.0; self.classes];
        self.logits_into(&h, &mut z);
        Ok(z)
    }

    /// Softmax over the classifier logits.
    pub fn predict_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.logits(x)?;
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// `(argmax class, max probability)`; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> Result<(usize, f64)> {
        let p = self.predict_probs(x)?;
        let j = argmax(&p);
        Ok((j, p[j]))
    }

    /// Weighted mean cross-entropy `Σ w_i · CE_i / n` over the `n` examples
    /// and its gradient. Zero-weight examples contribute nothing but still
    /// count in `n`. An empty batch gives `(0, 0)`.
    pub fn loss_and_grad(&self, batch: &[Example<'_>]) -> Result<(f64, GradientBundle)> {
        let mut grads = GradientBundle::zeros_like(self);
        if batch.is_empty() {
            return Ok((0.0, grads));
        }
        let n = batch.len() as f64;
        let mut h = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.classes];
        let mut dh = vec![0.0; self.hidden];
        let mut loss = 0.0;
        for ex in batch {
            self.check_input(ex.x)?;
            if ex.target >= self.classes {
                return Err(invalid(format!("target {} out of range", ex.target)));
            }
            if ex.weight.is_nan() || ex.weight < 0.0 {
                return Err(invalid(format!("example weight {} must be >= 0", ex.weight)));
            }
            if ex.weight == 0.0 {
                continue;
            }
            let scale = ex.weight / n;
            self.features_into(ex.x, &mut h);
            self.logits_into(&h, &mut z);
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += scale * (lse - z[ex.target]);

            // dL/dz = scale · (softmax(z) − onehot)
            for (k, zk) in z.iter_mut().enumerate() {
                let p = (*zk - lse).exp();
                *zk = scale * (p - if k == ex.target { 1.0 } else { 0.0 });
            }
            dh.iter_mut().for_each(|v| *v = 0.0);
            for (k, &dz) in z.iter().enumerate() {
                grads.b2[k] += dz;
                let row = &self.w2[k * self.hidden..(k + 1) * self.hidden];
                let grow = &mut grads.w2[k * self.hidden..(k + 1) * self.hidden];
                for ((g, w), (hv, d)) in grow.iter_mut().zip(row).zip(h.iter().zip(dh.iter_mut())) {
                    *g += dz * hv;
                    *d += dz * w;
                }
            }
            // ReLU gate: h > 0 exactly where the pre-activation is positive.
            for (j, (&hv, &d)) in h.iter().zip(&dh).enumerate() {
                if hv <= 0.0 || d == 0.0 {
                    continue;
                }
                grads.b1[j] += d;
                let grow = &mut grads.w1[j * self.dim..(j + 1) * self.dim];
                grow.iter_mut().zip(ex.x).for_each(|(g, xv)| *g += d * xv);
            }
        }
        Ok((loss, grads))
    }

    /// Plain SGD step `p ← p − lr · g`. Frozen feature parameters are left
    /// bit-identical.
    pub fn apply_update(&mut self, grads: &GradientBundle, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and >= 0, got {lr}")));
        }
        if grads.w1.len() != self.w1.len()
            || grads.b1.len() != self.b1.len()
            || grads.w2.len() != self.w2.len()
            || grads.b2.len() != self.b2.len()
        {
            return Err(Error::Shape("gradient bundle does not match the model".into()));
        }
        let step = |p: &mut Vec<f64>, g: &Vec<f64>| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        if !self.features_frozen {
            step(&mut self.w1, &grads.w1);
            step(&mut self.b1, &grads.b1);
        }
        step(&mut self.w2, &grads.w2);
        step(&mut self.b2, &grads.b2);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|v| v.is_finite())
    }

    /// SHA-256 over the bit patterns of `W1` and `b1`, hex encoded.
    pub fn feature_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.w1.iter().chain(&self.b1) {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// SHA-256 over every parameter, hex encoded.
    pub fn parameter_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.parameters() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BISLABMM";
const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint layout (all integers and floats little-endian):
///
/// ```text
/// magic        8 bytes  "BISLABMM"
/// version      u32      1
/// array count  u32      4
/// per array:
///   name len   u32, name bytes (UTF-8): w1 | b1 | w2 | b2
///   rank       u32
///   dims       u64 × rank
///   values     f64 × product(dims), row-major
/// ```
impl MicroModel {
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let arrays: [(&str, Vec<usize>, &[f64]); 4] = [
            ("w1", vec![self.hidden, self.dim], &self.w1),
            ("b1", vec![self.hidden], &self.b1),
            ("w2", vec![self.classes, self.hidden], &self.w2),
            ("b2", vec![self.classes], &self.b2),
        ];
        out.write_all(&(arrays.len() as u32).to_le_bytes())?;
        for (name, dims, values) in arrays {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in dims {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in values {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        fn u32_of<R: Read>(r: &mut R) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn u64_of<R: Read>(r: &mut R) -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        }
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = u32_of(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32_of(&mut input)?;
        let mut arrays = std::collections::HashMap::new();
        for _ in 0..count {
            let name_len = u32_of(&mut input)? as usize;
            if name_len > 64 {
                return Err(Error::Format("parameter name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = u32_of(&mut input)? as usize;
            if rank == 0 || rank > 2 {
                return Err(Error::Format(format!("unexpected rank {rank} for `{name}`")));
            }
            let dims = (0..rank)
                .map(|_| u64_of(&mut input).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= 1 << 28)
                .ok_or_else(|| Error::Format(format!("array `{name}` is too large")))?;
            let mut values = Vec::with_capacity(len);
            let mut b = [0u8; 8];
            for _ in 0..len {
                input.read_exact(&mut b)?;
                values.push(f64::from_le_bytes(b));
            }
            arrays.insert(name, (dims, values));
        }
        let mut take = |name: &str| {
            arrays
                .remove(name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))
        };
        let (w1_dims, w1) = take("w1")?;
        let (_, b1) = take("b1")?;
        let (_, w2) = take("w2")?;
        let (_, b2) = take("b2")?;
        if w1_dims.len() != 2 {
            return Err(Error::Format("w1 must be a matrix".into()));
        }
        Self::from_parts(w1_dims[1], w1, b1, w2, b2)
    }
}
