//! Mask overlap scores, confusion-matrix rates and the ROI-level detection
//! matching protocol.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::imaging::{connected_components, BinaryMask, Roi, RoiRecord};

fn check_dims(op: &'static str, a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if !a.same_dims(b) {
        return contract(
            op,
            format!(
                "masks differ in size: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            ),
        );
    }
    Ok(())
}

fn overlap_counts(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    let mut inter = 0;
    let (mut na, mut nb) = (0, 0);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    (inter, na, nb)
}

/// `|A∩B| / |A∪B|`; two empty masks score 1.
pub fn jaccard(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims("jaccard", pred, truth)?;
    let (inter, na, nb) = overlap_counts(pred, truth);
    let union = na + nb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(pred: &BinaryMask, truth: &BinaryMask) -> Result<f64> {
    check_dims("dice", pred, truth)?;
    let (inter, na, nb) = overlap_counts(pred, truth);
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub jaccard: f64,
    pub dice: f64,
}

pub fn seg_scores(pred: &BinaryMask, truth: &BinaryMask) -> Result<SegScores> {
    Ok(SegScores {
        jaccard: jaccard(pred, truth)?,
        dice: dice(pred, truth)?,
    })
}

/// Pools per-image masks into one score by summing pixel counts.
pub fn pooled_seg_scores(pairs: &[(&BinaryMask, &BinaryMask)]) -> Result<SegScores> {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (p, t) in pairs {
        check_dims("pooled_seg_scores", p, t)?;
        let (i, a, b) = overlap_counts(p, t);
        inter += i;
        na += a;
        nb += b;
    }
    let union = na + nb - inter;
    Ok(SegScores {
        jaccard: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        dice: if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 },
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, truth: bool, predicted: bool) {
        match (truth, predicted) {
            (true, true) => self.tp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

/// Rates with a zero denominator are `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// F1 as the harmonic mean of precision and recall.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => f1_score(p, r),
        _ => None,
    };
    Rates {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1,
    }
}

/// Labels each ROI by whether at least `overlap_threshold` of its region's
/// pixels lie on truth foreground, tallies it against its predicted label,
/// and counts one false negative for every truth component that no ROI
/// touches. ROIs without a predicted label count as predicted negative.
pub fn match_rois_to_truth(
    rois: &mut [Roi],
    truth: &BinaryMask,
    overlap_threshold: f64,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    let mut touched = vec![false; truth.width() * truth.height()];
    for roi in rois.iter_mut() {
        let b = roi.bbox();
        if b.x_max >= truth.width() || b.y_max >= truth.height() {
            return contract(
                "match_rois_to_truth",
                format!(
                    "region {} bbox {:?} outside {}x{} truth mask",
                    roi.region.id,
                    b,
                    truth.width(),
                    truth.height()
                ),
            );
        }
        let mut on = 0usize;
        for (x, y) in roi.region.pixels() {
            let i = y * truth.width() + x;
            on += truth.bits()[i] as usize;
            touched[i] = true;
        }
        let label = on as f64 >= overlap_threshold * roi.region.area as f64;
        roi.truth_label = Some(label);
        counts.record(label, roi.predicted_label.unwrap_or(false));
    }
    for comp in connected_components(truth) {
        let hit = comp.pixels().any(|(x, y)| touched[y * truth.width() + x]);
        if !hit {
            counts.fn_ += 1;
        }
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageDetection {
    pub image: String,
    pub counts: ConfusionCounts,
    pub rois: Vec<RoiRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetReport {
    pub counts: ConfusionCounts,
    pub rates: Rates,
    pub per_image: Vec<ImageDetection>,
}

impl DetReport {
    pub fn from_images(per_image: Vec<ImageDetection>) -> Self {
        let mut counts = ConfusionCounts::default();
        for img in &per_image {
            counts += img.counts;
        }
        Self {
            counts,
            rates: rates(&counts),
            per_image,
        }
    }
}
