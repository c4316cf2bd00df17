use super::raster::RasterImage;
use super::roi::Roi;

pub const BACILLI_COLOR: [u8; 3] = [0, 255, 0];
pub const NON_BACILLI_COLOR: [u8; 3] = [255, 0, 0];

/// Copy of `image` with each ROI's bounding-box perimeter drawn one pixel
/// wide: green for predicted bacilli, red otherwise (including unclassified).
pub fn overlay_render(image: &RasterImage, rois: &[Roi]) -> RasterImage {
    let mut out = image.clone();
    for roi in rois {
        let color = if roi.predicted_label == Some(true) {
            BACILLI_COLOR
        } else {
            NON_BACILLI_COLOR
        };
        let b = roi.bbox();
        if b.x_max >= out.width() || b.y_max >= out.height() {
            continue;
        }
        for x in b.x_min..=b.x_max {
            out.set_pixel(x, b.y_min, color);
            out.set_pixel(x, b.y_max, color);
        }
        for y in b.y_min..=b.y_max {
            out.set_pixel(b.x_min, y, color);
            out.set_pixel(b.x_max, y, color);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{extract_rois, Region, Run};

    #[test]
    fn no_rois_is_identity() {
        let img = RasterImage::filled(5, 5, [1, 2, 3]);
        assert_eq!(overlay_render(&img, &[]), img);
    }

    #[test]
    fn only_perimeter_changes() {
        let img = RasterImage::filled(8, 8, [10, 20, 30]);
        let region = Region::from_runs(0, vec![Run { y: 2, x_start: 1, x_end: 4 }, Run { y: 5, x_start: 3, x_end: 3 }]);
        let mut rois = extract_rois(&img, &[region]).unwrap();
        rois[0].predicted_label = Some(true);
        let out = overlay_render(&img, &rois);
        for y in 0..8 {
            for x in 0..8 {
                let inside = (1..=4).contains(&x) && (2..=5).contains(&y);
                let edge = inside && (x == 1 || x == 4 || y == 2 || y == 5);
                let expect = if edge { BACILLI_COLOR } else { [10, 20, 30] };
                assert_eq!(out.pixel(x, y), expect, "({x},{y})");
            }
        }
    }
}
