//! `tbd` — generate synthetic smears, train the segmenter and classifier,
//! run detection, and evaluate results from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tbd", version, about = "Two-stage bacilli detection: attention residual U-Net segmentation + transformer ROI classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every pipeline subcommand. Flags override values
/// from `--config`, which in turn overrides the built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Pipeline configuration file (JSON, unknown keys rejected); missing
    /// sections fall back to built-in defaults
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for all randomness: synthesis, initialisation, shuffling,
    /// dropout and negative sampling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-patch inference; results do not depend on it
    /// [default: 1]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Square tile side for segmentation; must be divisible by 2^depth
    /// [default: 64, or the side stored in a loaded segmenter checkpoint]
    #[arg(long, value_name = "PIXELS")]
    pub patch_side: Option<usize>,
    /// Regions with area ≤ this are discarded [default: 200·(patch_side/256)²]
    #[arg(long, value_name = "PIXELS")]
    pub min_area: Option<f64>,
    /// Foreground probability threshold (strict >) [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f32>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset (images, masks, manifest.json)
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Number of training images
        #[arg(long, default_value_t = 40)]
        n_train: usize,
        /// Number of test images
        #[arg(long, default_value_t = 10)]
        n_test: usize,
    },
    /// Train the segmenter on the training split of a dataset
    TrainSeg {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.json
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Checkpoint directory (manifest.json, weights.bin, epochs.csv)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train the ROI classifier on a balanced ROI set from the training split
    TrainCls {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.json
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Checkpoint directory (manifest.json, weights.bin, epochs.csv)
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Segment one image and write the binary mask
    Segment {
        #[command(flatten)]
        common: Common,
        /// Segmenter checkpoint directory
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Input image
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Output mask PNG
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Full pipeline on one image: tile, segment, reassemble, extract and
    /// classify regions; writes report.json, mask.png and overlay.png
    Detect {
        #[command(flatten)]
        common: Common,
        /// Segmenter checkpoint directory
        #[arg(long, value_name = "DIR")]
        seg_model: PathBuf,
        /// Classifier checkpoint directory
        #[arg(long, value_name = "DIR")]
        cls_model: PathBuf,
        /// Input image
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Jaccard and Dice of a predicted mask against a truth mask, or of a
    /// segmenter over a dataset's test split (pooled pixel counts)
    EvalSeg {
        #[command(flatten)]
        common: Common,
        /// Predicted mask (with --truth)
        #[arg(long, value_name = "FILE", requires = "truth", conflicts_with_all = ["model", "data"])]
        pred: Option<PathBuf>,
        /// Ground-truth mask (with --pred)
        #[arg(long, value_name = "FILE", requires = "pred")]
        truth: Option<PathBuf>,
        /// Segmenter checkpoint directory (with --data)
        #[arg(long, value_name = "DIR", requires = "data")]
        model: Option<PathBuf>,
        /// Dataset manifest.json (with --model)
        #[arg(long, value_name = "FILE", requires = "model")]
        data: Option<PathBuf>,
        /// Also write scores to <OUT>.json and <OUT>.csv
        #[arg(long, value_name = "STEM")]
        out: Option<PathBuf>,
    },
    /// Detection accuracy, precision, recall and F1 over a dataset's test split
    EvalDet {
        #[command(flatten)]
        common: Common,
        /// Segmenter checkpoint directory
        #[arg(long, value_name = "DIR")]
        seg_model: PathBuf,
        /// Classifier checkpoint directory
        #[arg(long, value_name = "DIR")]
        cls_model: PathBuf,
        /// Dataset manifest.json
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Also write the report to <OUT>.json and <OUT>.csv
        #[arg(long, value_name = "STEM")]
        out: Option<PathBuf>,
    },
    /// Otsu-threshold baseline: mask one image, or score a dataset's test split
    BaselineOtsu {
        #[command(flatten)]
        common: Common,
        /// Input image (writes its mask to --out)
        #[arg(long, value_name = "FILE", conflicts_with = "data", requires = "out")]
        image: Option<PathBuf>,
        /// Dataset manifest.json (prints pooled scores; --out is a report stem)
        #[arg(long, value_name = "FILE", required_unless_present = "image")]
        data: Option<PathBuf>,
        /// Mask PNG (with --image) or report stem (with --data)
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient checks of every primitive and both models
    /// at 64-bit precision; exits 0 only if all pass
    Gradcheck {
        /// First seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
