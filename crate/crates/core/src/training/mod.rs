//! Training loops for both models, validation callbacks and balanced ROI
//! dataset construction.

mod callbacks;
mod classifier;
mod roi_set;
mod segmenter;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use callbacks::{CallbackState, Decision, EarlyStopping, ReduceLrOnPlateau};
pub use classifier::{roi_tensor, train_classifier, LabeledRoi};
pub use roi_set::{build_balanced_roi_set, AnnotatedImage, MAX_NEGATIVE_OVERLAP};
pub use segmenter::{patch_batch, train_segmenter, PatchPair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
    /// When set, the best model is also written here as a checkpoint.
    #[serde(skip)]
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 1e-3,
            early_stop_patience: 3,
            min_delta: 1e-4,
            lr_factor: 0.5,
            lr_patience: 2,
            min_lr: 1e-5,
            val_fraction: 0.1,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn segmenter() -> Self {
        Self::default()
    }

    pub fn classifier() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor {} outside (0, 1)", self.lr_factor)));
        }
        if !(self.lr > 0.0) || self.min_lr < 0.0 || self.early_stop_patience == 0 || self.lr_patience == 0 {
            return Err(Error::Config(
                "lr must be positive, min_lr non-negative and patiences at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    /// Metric driving the callbacks (Jaccard or accuracy).
    pub val_metric: f64,
}

/// A trained model with its history.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Parameters from the best validation epoch.
    pub model: M,
    pub logs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Seeded shuffle, then the first `max(1, round(n·fraction))` indices form
/// the validation set. Needs at least two items.
pub(crate) fn split_validation(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Contract {
            op: "train",
            detail: format!("need at least 2 samples to hold out validation data, got {n}"),
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_split_sizes() {
        let (t, v) = split_validation(100, 0.1, &mut rng(0)).unwrap();
        assert_eq!((t.len(), v.len()), (90, 10));
        let (t, v) = split_validation(3, 0.1, &mut rng(0)).unwrap();
        assert_eq!((t.len(), v.len()), (2, 1));
        assert!(split_validation(1, 0.1, &mut rng(0)).is_err());
        let mut all: Vec<_> = t.into_iter().chain(v).collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { val_fraction: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_factor: 1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
