//! Top-level configuration file: every section has documented defaults and
//! unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::imaging::{scaled_min_area, Polarity};
use crate::io::SynthConfig;
use crate::training::TrainConfig;
use crate::unet::UNetConfig;
use crate::vit::{FocalLossConfig, ViTConfig};

/// Area threshold at 256-pixel patches; scaled quadratically for other sides.
pub const BASE_MIN_AREA: f64 = 200.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingConfig {
    /// Probability threshold for the segmentation mask (strict `>`).
    pub threshold: f32,
    /// Explicit minimum region area; `None` scales [`BASE_MIN_AREA`] to the
    /// patch side.
    pub min_area: Option<f64>,
    /// Fraction of an ROI's pixels that must lie on truth foreground for it
    /// to count as a bacillus during evaluation.
    pub overlap_threshold: f64,
    pub otsu_polarity: Polarity,
    /// Worker threads for per-patch inference.
    pub threads: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            min_area: None,
            overlap_threshold: 0.5,
            otsu_polarity: Polarity::Dark,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub unet: UNetConfig,
    pub vit: ViTConfig,
    pub focal: FocalLossConfig,
    pub seg_train: TrainConfig,
    pub cls_train: TrainConfig,
    pub synth: SynthConfig,
    pub imaging: ImagingConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            unet: UNetConfig::default(),
            vit: ViTConfig::default(),
            focal: FocalLossConfig::default(),
            seg_train: TrainConfig::segmenter(),
            cls_train: TrainConfig::classifier(),
            synth: SynthConfig::default(),
            imaging: ImagingConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The laptop-scale configuration used for the synthetic end-to-end
    /// run: a narrower segmenter (base 8) trained for 6 epochs; everything
    /// else at its default.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.unet.base_channels = 8;
        cfg.seg_train.epochs = 6;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        self.vit.validate()?;
        self.seg_train.validate()?;
        self.cls_train.validate()?;
        self.synth.validate()?;
        let im = &self.imaging;
        if !(0.0..=1.0).contains(&im.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", im.threshold)));
        }
        if im.min_area.is_some_and(|a| a < 0.0 || !a.is_finite()) {
            return Err(Error::Config("min_area must be a non-negative number".into()));
        }
        if !(im.overlap_threshold > 0.0 && im.overlap_threshold <= 1.0) {
            return Err(Error::Config("overlap_threshold must lie in (0, 1]".into()));
        }
        if im.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.focal.gamma < 0.0 || self.focal.class_weights.as_ref().is_some_and(|w| w.iter().any(|&v| !(v > 0.0))) {
            return Err(Error::Config("focal gamma must be ≥ 0 and class weights > 0".into()));
        }
        Ok(())
    }

    pub fn patch_side(&self) -> usize {
        self.unet.patch_side
    }

    pub fn min_area(&self) -> f64 {
        self.imaging
            .min_area
            .unwrap_or_else(|| scaled_min_area(BASE_MIN_AREA, self.unet.patch_side))
    }
}
