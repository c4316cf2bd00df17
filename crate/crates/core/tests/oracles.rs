mod common;

use common::*;

fn pass(check: Check) {
    match check {
        Ok(summary) => println!("{summary}"),
        Err(why) => panic!("{why}"),
    }
}

#[test]
fn tile_counts_for_the_three_microscope_resolutions() {
    pass(check_microscope_patch_counts());
}

#[test]
fn detection_rates_match_hand_computed_matrices() {
    pass(check_rate_formulas());
}

#[test]
fn tiling_roundtrip_on_random_sizes() {
    pass(check_tiling_roundtrip(100, 11));
}

#[test]
fn components_match_flood_fill() {
    pass(check_components(200, 12));
}

#[test]
fn segmentation_metrics_match_pixel_counts() {
    pass(check_seg_metrics(100, 13));
}

#[test]
fn focal_loss_collapses_to_cross_entropy() {
    pass(check_focal_collapse(100, 14));
}

#[test]
fn otsu_matches_exhaustive_search() {
    pass(check_otsu(100, 15));
}

#[test]
fn two_level_image_is_split_between_the_levels() {
    use tbd_core::imaging::{otsu_threshold, Polarity, RasterImage};
    let mut data = Vec::new();
    for i in 0..64 {
        let v = if i % 2 == 0 { 50 } else { 200 };
        data.extend([v, v, v]);
    }
    let image = RasterImage::new(8, 8, data).unwrap();
    let r = otsu_threshold(&image, Polarity::Dark);
    assert!((50..200).contains(&r.threshold));
    assert_eq!(r.mask.count(), 32);
}

#[test]
fn flood_fill_oracle_sanity() {
    use tbd_core::imaging::BinaryMask;
    // two diagonal touches join; a gap separates
    let bits = [
        1, 0, 0, 1, //
        0, 1, 0, 0, //
        0, 0, 0, 1, //
    ];
    let mask = BinaryMask::new(4, 3, bits.iter().map(|&b| b == 1).collect()).unwrap();
    let regions = flood_fill_components(&mask);
    assert_eq!(regions.iter().map(|r| r.1).collect::<Vec<_>>(), vec![2, 1, 1]);
}
