//! Optimisation: Adam with mask-preserving updates, label smoothing, the
//! 1-N training loop, repeated runs and checkpoints.

mod adam;
mod checkpoint;
mod trainer;

use std::collections::BTreeMap;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use checkpoint::{from_bytes, load_checkpoint, save_checkpoint, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use trainer::{repeated_runs, train_run, EpochRecord, RepeatedRuns, TrainOutcome, TrainState};

use crate::model::config_fmt_real;
use crate::{Error, Real, Result, PRECISION};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: Real,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: Real,
    /// Seeds batch shuffling and dropout.
    pub seed: u64,
    /// Validation metrics every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Must match the build's precision (`f64` or `f32`).
    pub precision: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 128,
            epochs: 100,
            label_smoothing: 0.1,
            seed: 0,
            eval_every: 0,
            precision: PRECISION.to_string(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::param(format!("batch size must be at least 2, got {}", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::param(format!(
                "label smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            )));
        }
        if self.precision != PRECISION {
            return Err(Error::param(format!(
                "precision '{}' requested but this build computes in {PRECISION}",
                self.precision
            )));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", config_fmt_real(self.lr)),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("label_smoothing", config_fmt_real(self.label_smoothing)),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("precision", self.precision.clone()),
        ]
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(pairs: &BTreeMap<String, String>, k: &str) -> Result<T> {
            let raw = pairs
                .get(k)
                .ok_or_else(|| Error::param(format!("missing train key '{k}'")))?;
            raw.parse().map_err(|_| Error::param(format!("bad value '{raw}' for '{k}'")))
        }
        Ok(TrainConfig {
            lr: get(pairs, "lr")?,
            batch_size: get(pairs, "batch_size")?,
            epochs: get(pairs, "epochs")?,
            label_smoothing: get(pairs, "label_smoothing")?,
            seed: get(pairs, "seed")?,
            eval_every: get(pairs, "eval_every")?,
            precision: get(pairs, "precision")?,
        })
    }
}

/// `y' = (1 - ls) · y + ls / N` over rows of width `n`.
pub fn smooth_labels(labels: &[Real], n: usize, ls: Real) -> Result<Vec<Real>> {
    if !(0.0..1.0).contains(&ls) {
        return Err(Error::param(format!("label smoothing must lie in [0, 1), got {ls}")));
    }
    if n == 0 || !labels.len().is_multiple_of(n) {
        return Err(Error::shape("smooth_labels", &[labels.len()], &[n]));
    }
    if ls == 0.0 {
        return Ok(labels.to_vec());
    }
    let floor = ls / n as Real;
    Ok(labels.iter().map(|y| (1.0 - ls) * y + floor).collect())
}
