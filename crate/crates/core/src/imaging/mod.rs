//! Deterministic image plumbing: rasters and masks, patch tiling, mask
//! binarization, connected components, ROI cropping, the Otsu baseline and
//! overlay rendering.

mod components;
mod otsu;
mod overlay;
mod raster;
mod roi;
mod tiling;

pub use components::{connected_components, filter_regions_by_area, scaled_min_area, BBox, Region, Run};
pub use otsu::{between_class_variance, luma, otsu_threshold, OtsuResult, Polarity};
pub use overlay::{overlay_render, BACILLI_COLOR, NON_BACILLI_COLOR};
pub use raster::{BinaryMask, RasterImage};
pub use roi::{extract_rois, resize_bilinear, Roi, RoiRecord};
pub use tiling::{binarize, reassemble_mask, split_into_patches, split_mask, PatchGrid};
