//! End-to-end detection: tile → segment → reassemble → components → area
//! filter → ROIs → classify.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tbd_tensor::Tensor;

use crate::error::{Error, Result};
use crate::imaging::{
    binarize, connected_components, extract_rois, filter_regions_by_area, reassemble_mask,
    split_into_patches, BinaryMask, PatchGrid, RasterImage, Roi,
};
use crate::training::roi_tensor;
use crate::unet::UNet;
use crate::vit::TBViT;

/// Patches per inference batch.
const INFER_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub patch_side: usize,
    pub threshold: f32,
    pub min_area: f64,
    pub threads: usize,
}

pub struct Segmentation {
    pub mask: BinaryMask,
    pub grid: PatchGrid,
}

pub struct Detection {
    pub mask: BinaryMask,
    pub grid: PatchGrid,
    pub rois: Vec<Roi>,
}

/// Runs `f` on a dedicated pool of `threads` workers. Work items are
/// independent, so results do not depend on the thread count.
fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

/// Per-patch probabilities `[1,1,p,p]` for every grid cell, row-major.
pub fn patch_probabilities(
    unet: &UNet<f32>,
    image: &RasterImage,
    patch_side: usize,
    threads: usize,
) -> Result<(Vec<Tensor<f32>>, PatchGrid)> {
    if !patch_side.is_multiple_of(1 << unet.config().depth) {
        return Err(Error::Config(format!(
            "patch side {patch_side} is incompatible with a depth-{} network",
            unet.config().depth
        )));
    }
    let (patches, grid) = split_into_patches(image, patch_side)?;
    let batches: Vec<&[RasterImage]> = patches.chunks(INFER_BATCH).collect();
    let results: Vec<Result<Vec<Tensor<f32>>>> = with_pool(threads, || {
        batches
            .par_iter()
            .map(|chunk| {
                let mut data = Vec::with_capacity(chunk.len() * 3 * patch_side * patch_side);
                for p in chunk.iter() {
                    data.extend(p.to_chw());
                }
                let x = Tensor::new([chunk.len(), 3, patch_side, patch_side], data)?;
                let probs = unet.predict(x)?;
                probs
                    .chunks(patch_side * patch_side)
                    .map(|c| Ok(Tensor::new([1, 1, patch_side, patch_side], c.to_vec())?))
                    .collect()
            })
            .collect()
    })?;
    let mut out = Vec::with_capacity(grid.len());
    for r in results {
        out.extend(r?);
    }
    Ok((out, grid))
}

/// Segments the grid-covered area of `image`.
pub fn segment_image(
    unet: &UNet<f32>,
    image: &RasterImage,
    patch_side: usize,
    threshold: f32,
    threads: usize,
) -> Result<Segmentation> {
    let (probs, grid) = patch_probabilities(unet, image, patch_side, threads)?;
    let masks = probs
        .iter()
        .map(|p| binarize(p, threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok(Segmentation {
        mask: reassemble_mask(&masks, grid)?,
        grid,
    })
}

/// Fills `predicted_label` (argmax) and `score` (bacilli probability).
pub fn classify_rois(vit: &TBViT<f32>, rois: &mut [Roi], threads: usize) -> Result<()> {
    let side = vit.config().roi_side;
    let k = vit.config().num_classes;
    let chunks: Vec<&[Roi]> = rois.chunks(32).collect();
    let results: Vec<Result<Vec<f32>>> = with_pool(threads, || {
        chunks
            .par_iter()
            .map(|c| vit.predict(roi_tensor(c.iter().map(|r| &r.crop), side)?))
            .collect()
    })?;
    let mut probs = Vec::with_capacity(rois.len() * k);
    for r in results {
        probs.extend(r?);
    }
    for (roi, row) in rois.iter_mut().zip(probs.chunks(k)) {
        let pred = (0..k).fold(0, |b, c| if row[c] > row[b] { c } else { b });
        roi.predicted_label = Some(pred == 1);
        roi.score = Some(f64::from(row[1]));
    }
    Ok(())
}

/// The full two-stage pipeline on one image.
pub fn detect(unet: &UNet<f32>, vit: &TBViT<f32>, image: &RasterImage, cfg: &DetectConfig) -> Result<Detection> {
    let seg = segment_image(unet, image, cfg.patch_side, cfg.threshold, cfg.threads)?;
    let regions = filter_regions_by_area(connected_components(&seg.mask), cfg.min_area);
    let mut rois = extract_rois(image, &regions)?;
    if !rois.is_empty() {
        classify_rois(vit, &mut rois, cfg.threads)?;
    }
    Ok(Detection {
        mask: seg.mask,
        grid: seg.grid,
        rois,
    })
}

/// Crops `mask` to the area covered by `grid`.
pub fn crop_to_grid(mask: &BinaryMask, grid: PatchGrid) -> Result<BinaryMask> {
    let (w, h) = grid.covered();
    mask.crop(0, 0, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;
    use crate::vit::ViTConfig;

    fn models() -> (UNet<f32>, TBViT<f32>) {
        let unet = UNet::new(UNetConfig { base_channels: 2, depth: 2, patch_side: 16, ..UNetConfig::default() }, 1).unwrap();
        let vit = TBViT::new(ViTConfig { embed_dim: 8, num_heads: 2, num_layers: 1, mlp_dim: 8, ..ViTConfig::default() }, 2).unwrap();
        (unet, vit)
    }

    #[test]
    fn detection_covers_grid_and_labels_every_roi() {
        let (unet, vit) = models();
        let img = crate::io::synth_generate(&crate::io::SynthConfig { width: 40, height: 36, rod_length: (6.0, 10.0), rod_width: (2.0, 3.0), distractor_radius: (2.0, 3.0), bacilli: (2, 2), ..Default::default() }).unwrap().image;
        let cfg = DetectConfig { patch_side: 16, threshold: 0.5, min_area: 0.0, threads: 1 };
        let d = detect(&unet, &vit, &img, &cfg).unwrap();
        assert_eq!((d.mask.width(), d.mask.height()), (32, 32));
        assert!(d.rois.iter().all(|r| r.predicted_label.is_some() && r.score.is_some()));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (unet, _) = models();
        let img = crate::io::synth_generate(&crate::io::SynthConfig { width: 64, height: 64, rod_length: (6.0, 10.0), rod_width: (2.0, 3.0), distractor_radius: (2.0, 3.0), ..Default::default() }).unwrap().image;
        let (a, _) = patch_probabilities(&unet, &img, 16, 1).unwrap();
        let (b, _) = patch_probabilities(&unet, &img, 16, 3).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
        }
    }
}
