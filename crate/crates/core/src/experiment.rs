//! Seeded synthetic end-to-end run: generate data, train both models,
//! run the pipeline on held-out images and score it against ground truth
//! and the Otsu baseline.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{io_err, Result};
use crate::imaging::{otsu_threshold, split_into_patches, split_mask, BinaryMask, RoiRecord};
use crate::io::{
    generate_dataset, load_dataset, save_checkpoint, write_det_report, write_epoch_logs_csv,
    write_json, write_seg_scores, Sample, Split,
};
use crate::metrics::{match_rois_to_truth, pooled_seg_scores, DetReport, ImageDetection, SegScores};
use crate::pipeline::{crop_to_grid, detect, DetectConfig};
use crate::training::{
    build_balanced_roi_set, train_classifier, train_segmenter, AnnotatedImage, PatchPair,
    TrainOutcome,
};
use crate::unet::UNet;
use crate::vit::TBViT;

/// Files an experiment writes below its output directory.
pub mod files {
    pub const DATA: &str = "data";
    pub const SEG_MODEL: &str = "seg_model";
    pub const CLS_MODEL: &str = "cls_model";
    pub const SEG_LOG: &str = "seg_epochs.csv";
    pub const CLS_LOG: &str = "cls_epochs.csv";
    pub const SEG_SCORES: &str = "seg_scores";
    pub const OTSU_SCORES: &str = "otsu_scores";
    pub const DETECTION: &str = "detection";
    pub const SUMMARY: &str = "summary.json";
}

pub fn detect_config(cfg: &PipelineConfig) -> DetectConfig {
    DetectConfig {
        patch_side: cfg.patch_side(),
        threshold: cfg.imaging.threshold,
        min_area: cfg.min_area(),
        threads: cfg.imaging.threads,
    }
}

/// Patch/mask pairs from every sample, row-major within each image.
pub fn training_patches<'a>(samples: impl IntoIterator<Item = &'a Sample>, patch_side: usize) -> Result<Vec<PatchPair>> {
    let mut out = Vec::new();
    for s in samples {
        let (imgs, _) = split_into_patches(&s.image, patch_side)?;
        let (masks, _) = split_mask(&s.mask, patch_side)?;
        out.extend(imgs.into_iter().zip(masks));
    }
    Ok(out)
}

pub fn train_models(
    train: &[&Sample],
    cfg: &PipelineConfig,
    out_dir: Option<&Path>,
) -> Result<(TrainOutcome<UNet<f32>>, TrainOutcome<TBViT<f32>>)> {
    let patches = training_patches(train.iter().copied(), cfg.patch_side())?;
    let mut seg_cfg = cfg.seg_train.clone();
    let mut cls_cfg = cfg.cls_train.clone();
    if let Some(dir) = out_dir {
        seg_cfg.checkpoint_dir = Some(dir.join(files::SEG_MODEL));
        cls_cfg.checkpoint_dir = Some(dir.join(files::CLS_MODEL));
    }
    let seg = train_segmenter(&patches, &cfg.unet, &seg_cfg)?;
    let annotated: Vec<AnnotatedImage<'_>> = train
        .iter()
        .map(|s| AnnotatedImage {
            name: &s.name,
            image: &s.image,
            mask: &s.mask,
        })
        .collect();
    let rois = build_balanced_roi_set(&annotated, cfg.min_area(), cfg.cls_train.seed)?;
    let cls = train_classifier(&rois, &cfg.vit, &cfg.focal, &cls_cfg)?;
    Ok((seg, cls))
}

pub struct Evaluation {
    pub segmentation: SegScores,
    pub otsu: SegScores,
    pub detection: DetReport,
    pub predicted_masks: Vec<BinaryMask>,
}

/// Runs detection and the Otsu baseline on `samples`; segmentation scores
/// pool pixel counts over all images (grid-covered area only).
pub fn evaluate(
    unet: &UNet<f32>,
    vit: &TBViT<f32>,
    samples: &[&Sample],
    cfg: &PipelineConfig,
) -> Result<Evaluation> {
    let dcfg = detect_config(cfg);
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    let mut otsus = Vec::with_capacity(samples.len());
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let mut det = detect(unet, vit, &s.image, &dcfg)?;
        let truth = crop_to_grid(&s.mask, det.grid)?;
        let counts = match_rois_to_truth(&mut det.rois, &truth, cfg.imaging.overlap_threshold)?;
        per_image.push(ImageDetection {
            image: s.name.clone(),
            counts,
            rois: det.rois.iter().map(RoiRecord::from).collect(),
        });
        let otsu = otsu_threshold(&s.image, cfg.imaging.otsu_polarity).mask;
        otsus.push(crop_to_grid(&otsu, det.grid)?);
        truths.push(truth);
        preds.push(det.mask);
    }
    let seg_pairs: Vec<_> = preds.iter().zip(truths.iter()).collect();
    let otsu_pairs: Vec<_> = otsus.iter().zip(truths.iter()).collect();
    let segmentation = pooled_seg_scores(&seg_pairs)?;
    let otsu = pooled_seg_scores(&otsu_pairs)?;
    Ok(Evaluation {
        segmentation,
        otsu,
        detection: DetReport::from_images(per_image),
        predicted_masks: preds,
    })
}

/// Everything written to `summary.json`; contains no timings, so two runs
/// with the same configuration produce identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config: PipelineConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub seg_best_epoch: usize,
    pub seg_epochs_run: usize,
    pub cls_best_epoch: usize,
    pub cls_epochs_run: usize,
    pub segmentation: SegScores,
    pub otsu: SegScores,
    pub detection_f1: Option<f64>,
}

pub struct ExperimentRun {
    pub summary: ExperimentSummary,
    pub detection: DetReport,
    pub out_dir: PathBuf,
    pub elapsed: Duration,
}

/// Generates `n_train + n_test` synthetic images from `cfg.synth`, trains
/// both models, evaluates on the test split, and writes all artifacts below
/// `out_dir` (see [`files`]).
pub fn run_synthetic_experiment(cfg: &PipelineConfig, n_train: usize, n_test: usize, out_dir: &Path) -> Result<ExperimentRun> {
    let start = Instant::now();
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let data_dir = out_dir.join(files::DATA);
    generate_dataset(&cfg.synth, n_train, n_test, cfg.patch_side(), &data_dir)?;
    let dataset = load_dataset(&data_dir.join("manifest.json"))?;
    let train: Vec<&Sample> = dataset.split(Split::Train).collect();
    let test: Vec<&Sample> = dataset.split(Split::Test).collect();

    let (seg, cls) = train_models(&train, cfg, Some(out_dir))?;
    // the callbacks already wrote the best checkpoints; rewrite to be explicit
    save_checkpoint(&seg.model, &out_dir.join(files::SEG_MODEL))?;
    save_checkpoint(&cls.model, &out_dir.join(files::CLS_MODEL))?;
    write_epoch_logs_csv(&seg.logs, &out_dir.join(files::SEG_LOG))?;
    write_epoch_logs_csv(&cls.logs, &out_dir.join(files::CLS_LOG))?;

    let eval = evaluate(&seg.model, &cls.model, &test, cfg)?;
    write_seg_scores(&eval.segmentation, &out_dir.join(files::SEG_SCORES))?;
    write_seg_scores(&eval.otsu, &out_dir.join(files::OTSU_SCORES))?;
    write_det_report(&eval.detection, &out_dir.join(files::DETECTION))?;
    let summary = ExperimentSummary {
        config: cfg.clone(),
        n_train,
        n_test,
        seg_best_epoch: seg.best_epoch,
        seg_epochs_run: seg.logs.len(),
        cls_best_epoch: cls.best_epoch,
        cls_epochs_run: cls.logs.len(),
        segmentation: eval.segmentation,
        otsu: eval.otsu,
        detection_f1: eval.detection.rates.f1,
    };
    write_json(&summary, &out_dir.join(files::SUMMARY))?;
    Ok(ExperimentRun {
        summary,
        detection: eval.detection,
        out_dir: out_dir.to_path_buf(),
        elapsed: start.elapsed(),
    })
}
