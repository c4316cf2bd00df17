use tbd_tensor::Tensor;

use super::raster::{BinaryMask, RasterImage};
use crate::error::{contract, Result};

/// Non-overlapping square tiling; right and bottom remainders are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_side: usize,
    pub cols: usize,
    pub rows: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_side: usize) -> Result<Self> {
        if patch_side == 0 || patch_side > width.min(height) {
            return contract(
                "split_into_patches",
                format!("patch side {patch_side} does not fit a {width}x{height} image"),
            );
        }
        Ok(Self {
            patch_side,
            cols: width / patch_side,
            rows: height / patch_side,
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left pixel of patch `i` (row-major).
    pub fn origin(&self, i: usize) -> (usize, usize) {
        ((i % self.cols) * self.patch_side, (i / self.cols) * self.patch_side)
    }

    /// Extent of the covered area.
    pub fn covered(&self) -> (usize, usize) {
        (self.cols * self.patch_side, self.rows * self.patch_side)
    }
}

/// Row-major patches of `patch_side × patch_side` pixels.
pub fn split_into_patches(image: &RasterImage, patch_side: usize) -> Result<(Vec<RasterImage>, PatchGrid)> {
    let grid = PatchGrid::new(image.width(), image.height(), patch_side)?;
    let patches = (0..grid.len())
        .map(|i| {
            let (x, y) = grid.origin(i);
            image.crop(x, y, patch_side, patch_side)
        })
        .collect::<Result<_>>()?;
    Ok((patches, grid))
}

/// Mask counterpart of [`split_into_patches`].
pub fn split_mask(mask: &BinaryMask, patch_side: usize) -> Result<(Vec<BinaryMask>, PatchGrid)> {
    let grid = PatchGrid::new(mask.width(), mask.height(), patch_side)?;
    let patches = (0..grid.len())
        .map(|i| {
            let (x, y) = grid.origin(i);
            mask.crop(x, y, patch_side, patch_side)
        })
        .collect::<Result<_>>()?;
    Ok((patches, grid))
}

/// Stitches row-major patch masks back into a `(cols·p) × (rows·p)` mask.
pub fn reassemble_mask(patches: &[BinaryMask], grid: PatchGrid) -> Result<BinaryMask> {
    if patches.len() != grid.len() {
        return contract(
            "reassemble_mask",
            format!("grid has {} cells but {} patches were given", grid.len(), patches.len()),
        );
    }
    let p = grid.patch_side;
    let (w, h) = grid.covered();
    let mut out = BinaryMask::empty(w, h);
    for (i, patch) in patches.iter().enumerate() {
        if patch.width() != p || patch.height() != p {
            return contract(
                "reassemble_mask",
                format!("patch {i} is {}x{}, expected {p}x{p}", patch.width(), patch.height()),
            );
        }
        let (ox, oy) = grid.origin(i);
        for y in 0..p {
            for x in 0..p {
                out.set(ox + x, oy + y, patch.get(x, y));
            }
        }
    }
    Ok(out)
}

/// Foreground where the probability is strictly above `threshold`. Accepts
/// `[1,1,H,W]` (or any shape whose last two axes are `H, W` with a single
/// leading plane).
pub fn binarize(prob: &Tensor<f32>, threshold: f32) -> Result<BinaryMask> {
    let s = prob.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return contract("binarize", format!("expected a single [.., H, W] plane, got {s:?}"));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    BinaryMask::new(w, h, prob.data().iter().map(|&v| v > threshold).collect())
}
