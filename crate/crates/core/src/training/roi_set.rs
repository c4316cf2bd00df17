use rand::seq::SliceRandom;
use rand::Rng;

use super::classifier::LabeledRoi;
use super::rng;
use crate::error::{Error, Result};
use crate::imaging::{connected_components, filter_regions_by_area, BinaryMask, RasterImage};

/// Negatives may cover at most this fraction of foreground pixels.
pub const MAX_NEGATIVE_OVERLAP: f64 = 0.1;
const ATTEMPTS: usize = 2000;

/// An image with its ground-truth mask.
#[derive(Clone, Copy, Debug)]
pub struct AnnotatedImage<'a> {
    pub name: &'a str,
    pub image: &'a RasterImage,
    pub mask: &'a BinaryMask,
}

/// Positives are the area-filtered truth components; for each one a
/// same-sized negative crop is drawn uniformly from the same image's
/// background (foreground fraction below [`MAX_NEGATIVE_OVERLAP`], centre
/// pixel on background). The combined list is shuffled with `seed`.
pub fn build_balanced_roi_set(images: &[AnnotatedImage<'_>], min_area: f64, seed: u64) -> Result<Vec<LabeledRoi>> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for img in images {
        let (iw, ih) = (img.image.width(), img.image.height());
        if img.mask.width() != iw || img.mask.height() != ih {
            return Err(Error::Dataset(format!(
                "{}: mask {}x{} does not match image {iw}x{ih}",
                img.name,
                img.mask.width(),
                img.mask.height()
            )));
        }
        for region in filter_regions_by_area(connected_components(img.mask), min_area) {
            let b = region.bbox;
            let (w, h) = (b.width(), b.height());
            out.push(LabeledRoi {
                crop: img.image.crop(b.x_min, b.y_min, w, h)?,
                label: true,
            });
            let mut found = None;
            for _ in 0..ATTEMPTS {
                let x = rng.gen_range(0..=iw - w);
                let y = rng.gen_range(0..=ih - h);
                if img.mask.get(x + w / 2, y + h / 2) {
                    continue;
                }
                let fg: usize = (y..y + h)
                    .map(|yy| (x..x + w).filter(|&xx| img.mask.get(xx, yy)).count())
                    .sum();
                if (fg as f64) < MAX_NEGATIVE_OVERLAP * (w * h) as f64 {
                    found = Some((x, y));
                    break;
                }
            }
            let Some((x, y)) = found else {
                return Err(Error::Dataset(format!(
                    "{}: insufficient background to sample a {w}x{h} negative crop",
                    img.name
                )));
            };
            out.push(LabeledRoi {
                crop: img.image.crop(x, y, w, h)?,
                label: false,
            });
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
