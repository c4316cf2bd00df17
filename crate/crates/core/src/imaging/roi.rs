use serde::{Deserialize, Serialize};

use super::components::{BBox, Region};
use super::raster::RasterImage;
use crate::error::{contract, Result};

/// Candidate object: a region, its RGB crop, and labels filled in later by
/// evaluation (`truth_label`) and classification (`predicted_label`, `score`).
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    pub region: Region,
    pub crop: RasterImage,
    pub truth_label: Option<bool>,
    pub predicted_label: Option<bool>,
    /// Classifier probability of the bacilli class.
    pub score: Option<f64>,
}

impl Roi {
    pub fn region_id(&self) -> usize {
        self.region.id
    }

    pub fn bbox(&self) -> BBox {
        self.region.bbox
    }
}

/// Serializable summary of an ROI, without pixel data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiRecord {
    pub region_id: usize,
    pub bbox: BBox,
    pub area: usize,
    pub truth_label: Option<bool>,
    pub predicted_label: Option<bool>,
    pub score: Option<f64>,
}

impl From<&Roi> for RoiRecord {
    fn from(r: &Roi) -> Self {
        Self {
            region_id: r.region.id,
            bbox: r.region.bbox,
            area: r.region.area,
            truth_label: r.truth_label,
            predicted_label: r.predicted_label,
            score: r.score,
        }
    }
}

/// One ROI per region, cropped from `image` at the region's bounding box.
pub fn extract_rois(image: &RasterImage, regions: &[Region]) -> Result<Vec<Roi>> {
    regions
        .iter()
        .map(|r| {
            let b = r.bbox;
            if b.x_max >= image.width() || b.y_max >= image.height() {
                return contract(
                    "extract_rois",
                    format!(
                        "region {} bbox {:?} outside {}x{} image",
                        r.id,
                        b,
                        image.width(),
                        image.height()
                    ),
                );
            }
            Ok(Roi {
                region: r.clone(),
                crop: image.crop(b.x_min, b.y_min, b.width(), b.height())?,
                truth_label: None,
                predicted_label: None,
                score: None,
            })
        })
        .collect()
}

/// Bilinear resize to `side × side` using pixel-centre alignment with edge
/// clamping. Returns planar `[3, side, side]` values in `[0, 1]`.
pub fn resize_bilinear(image: &RasterImage, side: usize) -> Vec<f32> {
    let (w, h) = (image.width(), image.height());
    let sx = w as f32 / side as f32;
    let sy = h as f32 / side as f32;
    let plane = side * side;
    let mut out = vec![0.0; 3 * plane];
    let src = |x: usize, y: usize, c: usize| f32::from(image.data()[(y * w + x) * 3 + c]);
    for oy in 0..side {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for ox in 0..side {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            for c in 0..3 {
                let top = src(x0, y0, c) * (1.0 - tx) + src(x1, y0, c) * tx;
                let bottom = src(x0, y1, c) * (1.0 - tx) + src(x1, y1, c) * tx;
                out[c * plane + oy * side + ox] = (top * (1.0 - ty) + bottom * ty) / 255.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::components::Run;

    fn gradient_image(w: usize, h: usize) -> RasterImage {
        RasterImage::new(
            w,
            h,
            (0..w * h * 3).map(|i| (i * 37 % 251) as u8).collect(),
        )
        .unwrap()
    }

    #[test]
    fn crop_extent_follows_bbox() {
        let img = gradient_image(10, 12);
        let region = Region::from_runs(
            0,
            vec![Run { y: 3, x_start: 2, x_end: 6 }, Run { y: 9, x_start: 4, x_end: 4 }],
        );
        let rois = extract_rois(&img, &[region]).unwrap();
        assert_eq!((rois[0].crop.width(), rois[0].crop.height()), (5, 7));
        assert_eq!(rois[0].crop.pixel(0, 0), img.pixel(2, 3));
    }

    #[test]
    fn out_of_bounds_region_rejected() {
        let img = gradient_image(4, 4);
        let region = Region::from_runs(0, vec![Run { y: 4, x_start: 0, x_end: 1 }]);
        assert!(extract_rois(&img, &[region]).is_err());
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let img = RasterImage::filled(7, 3, [51, 102, 255]);
        let out = resize_bilinear(&img, 8);
        assert!(out[..64].iter().all(|&v| (v - 0.2).abs() < 1e-6));
        assert!(out[128..].iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = gradient_image(6, 6);
        let out = resize_bilinear(&img, 6);
        assert_eq!(out, img.to_chw());
    }
}
