use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use tbd_core::config::PipelineConfig;
use tbd_core::experiment::{detect_config, evaluate, training_patches};
use tbd_core::gradsuite::run_suite;
use tbd_core::imaging::{otsu_threshold, overlay_render, RoiRecord};
use tbd_core::io::{
    generate_dataset, load_checkpoint, load_dataset, load_image, load_mask, save_checkpoint, save_image,
    save_mask, write_det_report, write_epoch_logs_csv, write_json, write_seg_scores, Sample, Split,
};
use tbd_core::metrics::{pooled_seg_scores, seg_scores, SegScores};
use tbd_core::pipeline::{crop_to_grid, detect, segment_image, DetectConfig};
use tbd_core::training::{build_balanced_roi_set, train_classifier, train_segmenter, AnnotatedImage, EpochLog};
use tbd_core::unet::UNet;
use tbd_core::vit::TBViT;

use crate::{Command, Common};

/// Epoch log file written next to each trained checkpoint.
const EPOCH_LOG: &str = "epochs.csv";

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::SynthGen { common, out, n_train, n_test } => {
            let cfg = pipeline_config(&common)?;
            let manifest = generate_dataset(&cfg.synth, n_train, n_test, cfg.patch_side(), &out)?;
            println!(
                "wrote {} images to {}",
                manifest.samples.len(),
                out.join("manifest.json").display()
            );
        }
        Command::TrainSeg { common, data, out } => {
            let mut cfg = pipeline_config(&common)?;
            let dataset = load_dataset(&data)?;
            let train: Vec<&Sample> = dataset.split(Split::Train).collect();
            let patches = training_patches(train.iter().copied(), cfg.patch_side())?;
            cfg.seg_train.checkpoint_dir = Some(out.clone());
            let outcome = train_segmenter(&patches, &cfg.unet, &cfg.seg_train)?;
            save_checkpoint(&outcome.model, &out)?;
            finish_training("segmenter", &outcome.logs, outcome.best_epoch, outcome.best_metric, &out)?;
        }
        Command::TrainCls { common, data, out } => {
            let mut cfg = pipeline_config(&common)?;
            let dataset = load_dataset(&data)?;
            let annotated: Vec<AnnotatedImage<'_>> = dataset
                .split(Split::Train)
                .map(|s| AnnotatedImage {
                    name: &s.name,
                    image: &s.image,
                    mask: &s.mask,
                })
                .collect();
            let rois = build_balanced_roi_set(&annotated, cfg.min_area(), cfg.cls_train.seed)?;
            cfg.cls_train.checkpoint_dir = Some(out.clone());
            let outcome = train_classifier(&rois, &cfg.vit, &cfg.focal, &cfg.cls_train)?;
            save_checkpoint(&outcome.model, &out)?;
            finish_training("classifier", &outcome.logs, outcome.best_epoch, outcome.best_metric, &out)?;
        }
        Command::Segment { common, model, image, out } => {
            let mut cfg = pipeline_config(&common)?;
            let unet = load_segmenter(&model, &common, &mut cfg)?;
            let img = load_image(&image)?;
            let dcfg = detect_config(&cfg);
            let seg = segment_image(&unet, &img, dcfg.patch_side, dcfg.threshold, dcfg.threads)?;
            save_mask(&seg.mask, &out)?;
            println!(
                "foreground {} of {} pixels; mask written to {}",
                seg.mask.count(),
                seg.mask.width() * seg.mask.height(),
                out.display()
            );
        }
        Command::Detect { common, seg_model, cls_model, image, out } => {
            let mut cfg = pipeline_config(&common)?;
            let unet = load_segmenter(&seg_model, &common, &mut cfg)?;
            let vit: TBViT<f32> = load_checkpoint(&cls_model)?;
            let img = load_image(&image)?;
            let dcfg = detect_config(&cfg);
            let det = detect(&unet, &vit, &img, &dcfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let rois: Vec<RoiRecord> = det.rois.iter().map(RoiRecord::from).collect();
            let report = DetectReport {
                image: image.display().to_string(),
                width: img.width(),
                height: img.height(),
                config: &dcfg,
                segmenter: seg_model.display().to_string(),
                classifier: cls_model.display().to_string(),
                regions: rois.len(),
                bacilli: rois.iter().filter(|r| r.predicted_label == Some(true)).count(),
                rois,
            };
            write_json(&report, &out.join("report.json"))?;
            save_mask(&det.mask, &out.join("mask.png"))?;
            save_image(&overlay_render(&img, &det.rois), &out.join("overlay.png"))?;
            println!(
                "{} regions, {} classified as bacilli; outputs in {}",
                report.regions,
                report.bacilli,
                out.display()
            );
        }
        Command::EvalSeg { common, pred, truth, model, data, out } => {
            let scores = match (pred, truth, model, data) {
                (Some(pred), Some(truth), None, None) => seg_scores(&load_mask(&pred)?, &load_mask(&truth)?)?,
                (None, None, Some(model), Some(data)) => {
                    let mut cfg = pipeline_config(&common)?;
                    let unet = load_segmenter(&model, &common, &mut cfg)?;
                    let dcfg = detect_config(&cfg);
                    let dataset = load_dataset(&data)?;
                    let mut pairs = Vec::new();
                    for s in dataset.split(Split::Test) {
                        let seg = segment_image(&unet, &s.image, dcfg.patch_side, dcfg.threshold, dcfg.threads)?;
                        let truth = crop_to_grid(&s.mask, seg.grid)?;
                        pairs.push((seg.mask, truth));
                    }
                    pooled(&pairs)?
                }
                _ => bail!("eval-seg needs either --pred and --truth, or --model and --data"),
            };
            print_scores(&scores);
            if let Some(stem) = out {
                write_seg_scores(&scores, &stem)?;
            }
        }
        Command::EvalDet { common, seg_model, cls_model, data, out } => {
            let mut cfg = pipeline_config(&common)?;
            let unet = load_segmenter(&seg_model, &common, &mut cfg)?;
            let vit: TBViT<f32> = load_checkpoint(&cls_model)?;
            let dataset = load_dataset(&data)?;
            let test: Vec<&Sample> = dataset.split(Split::Test).collect();
            if test.is_empty() {
                bail!("{} has no test samples", data.display());
            }
            let eval = evaluate(&unet, &vit, &test, &cfg)?;
            let (c, r) = (eval.detection.counts, eval.detection.rates);
            println!("tp={} tn={} fp={} fn={}", c.tp, c.tn, c.fp, c.fn_);
            println!(
                "accuracy={} precision={} recall={} f1={}",
                fmt_opt(r.accuracy),
                fmt_opt(r.precision),
                fmt_opt(r.recall),
                fmt_opt(r.f1)
            );
            if let Some(stem) = out {
                write_det_report(&eval.detection, &stem)?;
            }
        }
        Command::BaselineOtsu { common, image, data, out } => {
            let cfg = pipeline_config(&common)?;
            let polarity = cfg.imaging.otsu_polarity;
            if let Some(image) = image {
                let out = out.context("--out is required with --image")?;
                let result = otsu_threshold(&load_image(&image)?, polarity);
                save_mask(&result.mask, &out)?;
                println!("threshold={} foreground={}", result.threshold, result.mask.count());
            } else {
                let data = data.context("either --image or --data is required")?;
                let dataset = load_dataset(&data)?;
                let pairs = dataset
                    .split(Split::Test)
                    .map(|s| (otsu_threshold(&s.image, polarity).mask, s.mask.clone()))
                    .collect::<Vec<_>>();
                if pairs.is_empty() {
                    bail!("{} has no test samples", data.display());
                }
                let scores = pooled(&pairs)?;
                print_scores(&scores);
                if let Some(stem) = out {
                    write_seg_scores(&scores, &stem)?;
                }
            }
        }
        Command::Gradcheck { seed, seeds } => {
            if seeds == 0 {
                bail!("--seeds must be at least 1");
            }
            let report = run_suite(seed, seeds)?;
            for f in report.failures() {
                println!(
                    "FAIL {} (seed {}): max relative error {:.3e} at {:?}",
                    f.name, f.seed, f.report.max_rel_error, f.report.worst
                );
            }
            println!(
                "{} checks over seeds {}..{}; max relative error {:.3e}",
                report.entries.len(),
                seed,
                seed + seeds,
                report.max_rel_error()
            );
            if !report.passed() {
                bail!("gradient check failed");
            }
            println!("all gradient checks passed");
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectReport<'a> {
    image: String,
    width: usize,
    height: usize,
    config: &'a DetectConfig,
    segmenter: String,
    classifier: String,
    regions: usize,
    bacilli: usize,
    rois: Vec<RoiRecord>,
}

/// Loads `--config` (or defaults) and applies flag overrides.
fn pipeline_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.synth.seed = seed;
        cfg.seg_train.seed = seed;
        cfg.cls_train.seed = seed;
    }
    if let Some(t) = common.threads {
        cfg.imaging.threads = t;
    }
    if let Some(p) = common.patch_side {
        cfg.unet.patch_side = p;
    }
    if let Some(a) = common.min_area {
        cfg.imaging.min_area = Some(a);
    }
    if let Some(t) = common.threshold {
        cfg.imaging.threshold = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a segmenter and adopts its architecture; the tile side stays at
/// `--patch-side` when given, otherwise the checkpoint's.
fn load_segmenter(dir: &Path, common: &Common, cfg: &mut PipelineConfig) -> Result<UNet<f32>> {
    let unet: UNet<f32> = load_checkpoint(dir)?;
    cfg.unet = unet.config().clone();
    if let Some(p) = common.patch_side {
        cfg.unet.patch_side = p;
    }
    cfg.validate()?;
    Ok(unet)
}

fn finish_training(what: &str, logs: &[EpochLog], best_epoch: usize, best_metric: f64, out: &Path) -> Result<()> {
    write_epoch_logs_csv(logs, &out.join(EPOCH_LOG))?;
    println!(
        "{what}: {} epochs, best epoch {best_epoch} (validation metric {best_metric:.6}); checkpoint in {}",
        logs.len(),
        out.display()
    );
    Ok(())
}

fn pooled(pairs: &[(tbd_core::imaging::BinaryMask, tbd_core::imaging::BinaryMask)]) -> Result<SegScores> {
    let refs: Vec<_> = pairs.iter().map(|(p, t)| (p, t)).collect();
    Ok(pooled_seg_scores(&refs)?)
}

fn print_scores(s: &SegScores) {
    println!("jaccard={:?} dice={:?}", s.jaccard, s.dice);
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:?}"))
}
