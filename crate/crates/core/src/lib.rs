//! Laboratory for class-imbalanced semi-supervised learning.
//!
//! * [`sampling`]: random / mean / reverse class samplers, the `μ^q` keep
//!   probability and the Bi-Sampling blend with its decay schedules.
//! * [`data`]: long-tailed count profiles and synthetic Gaussian-mixture
//!   datasets.
//! * [`model`]: a one-hidden-layer network split into feature extractor and
//!   classifier, with analytic gradients.
//! * [`trainer`]: joint, fine-tune and Bi-Sampling training loops.
//! * [`eval`]: confusion matrices, per-class precision/recall, trend and
//!   pseudo-label diagnostics.
//! * [`exec`]: order-preserving data-parallel maps (rayon behind the
//!   `parallel` feature).

pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod record;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
