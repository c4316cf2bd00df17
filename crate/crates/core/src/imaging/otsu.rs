use serde::{Deserialize, Serialize};

use super::raster::{BinaryMask, RasterImage};

/// Which side of the threshold is foreground.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Grey levels `≤ t` (stained objects darker than the background).
    Dark,
    /// Grey levels `> t`.
    Bright,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OtsuResult {
    pub threshold: u8,
    pub mask: BinaryMask,
}

/// Rounded ITU-R 601 luma.
pub fn luma(px: [u8; 3]) -> u8 {
    let y = 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]);
    y.round().clamp(0.0, 255.0) as u8
}

/// Between-class variance of the split `{≤ t} | {> t}` from the class
/// counts and grey-level sums.
pub fn between_class_variance(n0: f64, s0: f64, n1: f64, s1: f64) -> f64 {
    if n0 == 0.0 || n1 == 0.0 {
        return 0.0;
    }
    let n = n0 + n1;
    let (w0, w1) = (n0 / n, n1 / n);
    let d = s0 / n0 - s1 / n1;
    w0 * w1 * d * d
}

/// Global Otsu threshold on the luma channel. The first threshold attaining
/// the maximal between-class variance wins; an image with a single grey level
/// has no separating threshold and yields `t = 0` with an empty mask.
pub fn otsu_threshold(image: &RasterImage, polarity: Polarity) -> OtsuResult {
    let grey: Vec<u8> = image.data().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
    let mut hist = [0u64; 256];
    for &g in &grey {
        hist[g as usize] += 1;
    }
    let total_n = grey.len() as f64;
    let total_s: f64 = hist.iter().enumerate().map(|(v, &c)| v as f64 * c as f64).sum();
    let (mut n0, mut s0) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0u8, 0.0);
    for t in 0..256 {
        n0 += hist[t] as f64;
        s0 += t as f64 * hist[t] as f64;
        let var = between_class_variance(n0, s0, total_n - n0, total_s - s0);
        if var > best_var {
            best_var = var;
            best_t = t as u8;
        }
    }
    let bits = if best_var == 0.0 {
        vec![false; grey.len()]
    } else {
        grey.iter()
            .map(|&g| match polarity {
                Polarity::Dark => g <= best_t,
                Polarity::Bright => g > best_t,
            })
            .collect()
    };
    OtsuResult {
        threshold: best_t,
        mask: BinaryMask::new(image.width(), image.height(), bits).expect("dimensions preserved"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grey_image(values: &[u8]) -> RasterImage {
        RasterImage::new(values.len(), 1, values.iter().flat_map(|&v| [v, v, v]).collect()).unwrap()
    }

    #[test]
    fn two_levels_are_separated() {
        let img = grey_image(&[50, 200, 50, 200, 200, 50]);
        let r = otsu_threshold(&img, Polarity::Dark);
        assert!((50..200).contains(&r.threshold));
        assert_eq!(r.mask.bits(), &[true, false, true, false, false, true]);
        let b = otsu_threshold(&img, Polarity::Bright);
        assert_eq!(b.mask.bits(), &[false, true, false, true, true, false]);
    }

    #[test]
    fn constant_image_has_empty_foreground() {
        for v in [0, 128, 255] {
            let r = otsu_threshold(&grey_image(&[v; 9]), Polarity::Dark);
            assert_eq!(r.threshold, 0);
            assert_eq!(r.mask.count(), 0);
        }
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma([255, 255, 255]), 255);
        assert_eq!(luma([255, 0, 0]), 76);
        assert_eq!(luma([0, 255, 0]), 150);
        assert_eq!(luma([0, 0, 255]), 29);
    }
}
