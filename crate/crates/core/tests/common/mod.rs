//! Independent oracles shared by the integration tests and the acceptance
//! report. Every check returns a one-line summary on success and the first
//! discrepancy on failure.

#![allow(dead_code)]

use std::collections::VecDeque;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tbd_core::imaging::{
    connected_components, luma, otsu_threshold, reassemble_mask, split_into_patches, split_mask, BBox,
    BinaryMask, Polarity, RasterImage,
};
use tbd_core::metrics::{dice, f1_score, jaccard, rates, ConfusionCounts};
use tbd_tensor::{Tape, Tensor};

pub type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    let bits = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::new(w, h, bits).expect("bit count matches")
}

// ---------------------------------------------------------------- patches

/// Image sizes, image counts and the tile totals they must produce at
/// 256-pixel tiles.
pub const MICROSCOPE_PATCH_COUNTS: [(usize, usize, usize, usize, usize); 6] = [
    (2880, 2048, 88, 81, 7128),
    (2880, 2048, 88, 20, 1760),
    (2816, 2048, 88, 72, 6336),
    (2816, 2048, 88, 18, 1584),
    (2592, 1944, 70, 72, 5040),
    (2592, 1944, 70, 18, 1260),
];

pub fn check_microscope_patch_counts() -> Check {
    let start = Instant::now();
    for &(w, h, per_image, images, total) in &MICROSCOPE_PATCH_COUNTS {
        let image = RasterImage::filled(w, h, [0, 0, 0]);
        let (patches, grid) = split_into_patches(&image, 256).map_err(|e| e.to_string())?;
        ensure(patches.len() == per_image && grid.len() == per_image, || {
            format!("{w}×{h}: {} patches, expected {per_image}", patches.len())
        })?;
        ensure(patches.len() * images == total, || {
            format!("{w}×{h}: {images} images give {}, expected {total}", patches.len() * images)
        })?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    ensure(elapsed < 1.0, || format!("took {elapsed:.3} s (limit 1 s)"))?;
    Ok(format!("all 6 counts exact in {elapsed:.3} s"))
}

// ---------------------------------------------------------------- detection rates

/// `(tp, tn, fp, fn, accuracy, precision, recall, f1)` evaluated by hand.
pub const HAND_CONFUSIONS: [(u64, u64, u64, u64, f64, f64, f64, f64); 12] = [
    (3, 4, 1, 2, 7.0 / 10.0, 3.0 / 4.0, 3.0 / 5.0, 6.0 / 9.0),
    (90, 85, 10, 15, 175.0 / 200.0, 90.0 / 100.0, 90.0 / 105.0, 180.0 / 205.0),
    (1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5),
    (10, 0, 0, 0, 1.0, 1.0, 1.0, 1.0),
    (5, 5, 5, 0, 10.0 / 15.0, 0.5, 1.0, 10.0 / 15.0),
    (7, 2, 0, 3, 9.0 / 12.0, 1.0, 7.0 / 10.0, 14.0 / 17.0),
    (2, 9, 6, 1, 11.0 / 18.0, 2.0 / 8.0, 2.0 / 3.0, 4.0 / 11.0),
    (163, 0, 0, 1, 163.0 / 164.0, 1.0, 163.0 / 164.0, 326.0 / 327.0),
    (40, 50, 3, 7, 90.0 / 100.0, 40.0 / 43.0, 40.0 / 47.0, 80.0 / 90.0),
    (1, 98, 0, 1, 99.0 / 100.0, 1.0, 0.5, 2.0 / 3.0),
    (12, 7, 12, 0, 19.0 / 31.0, 0.5, 1.0, 24.0 / 36.0),
    (25, 25, 25, 25, 0.5, 0.5, 0.5, 0.5),
];

pub fn check_rate_formulas() -> Check {
    let f1 = f1_score(1.0, 0.9939).ok_or("F1 undefined")?;
    let rounded = (f1 * 1e4).round() / 1e4;
    ensure(rounded == 0.9969, || format!("F1(1.0, 0.9939) = {f1} rounds to {rounded}, expected 0.9969"))?;
    let mut worst = 0.0f64;
    for &(tp, tn, fp, fn_, acc, prec, rec, f1) in &HAND_CONFUSIONS {
        let r = rates(&ConfusionCounts { tp, tn, fp, fn_ });
        for (name, got, want) in [
            ("accuracy", r.accuracy, acc),
            ("precision", r.precision, prec),
            ("recall", r.recall, rec),
            ("f1", r.f1, f1),
        ] {
            let got = got.ok_or_else(|| format!("{name} undefined for ({tp},{tn},{fp},{fn_})"))?;
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("{name} of ({tp},{tn},{fp},{fn_}) = {got}, expected {want}"))?;
        }
    }
    Ok(format!(
        "F1 = {f1:.6} → 0.9969; {} hand-computed matrices within 1e-12 (worst {worst:.1e})",
        HAND_CONFUSIONS.len()
    ))
}

// ---------------------------------------------------------------- tiling

pub fn check_tiling_roundtrip(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let p = rng.gen_range(1..=48);
        let w = rng.gen_range(p..=4 * p + 17);
        let h = rng.gen_range(p..=4 * p + 17);
        let density = rng.gen_range(0.05..0.95);
        let mask = random_mask(&mut rng, w, h, density);
        let (patches, grid) = split_mask(&mask, p).map_err(|e| e.to_string())?;
        let back = reassemble_mask(&patches, grid).map_err(|e| e.to_string())?;
        let (cw, ch) = (w / p * p, h / p * p);
        ensure(back.width() == cw && back.height() == ch, || {
            format!("case {case}: {w}×{h}/{p} reassembled to {}×{}", back.width(), back.height())
        })?;
        for y in 0..ch {
            for x in 0..cw {
                ensure(back.get(x, y) == mask.get(x, y), || format!("case {case}: {w}×{h}/{p} differs at ({x},{y})"))?;
            }
        }
    }
    Ok(format!("{cases} random sizes exact on the covered area"))
}

// ---------------------------------------------------------------- components

/// A component as `(sorted pixels, area, bbox)`.
pub type OracleRegion = (Vec<(usize, usize)>, usize, BBox);

/// Breadth-first 8-connected flood fill, components in raster order of
/// their first pixel.
pub fn flood_fill_components(mask: &BinaryMask) -> Vec<OracleRegion> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y0 in 0..h {
        for x0 in 0..w {
            if !mask.get(x0, y0) || seen[y0 * w + x0] {
                continue;
            }
            seen[y0 * w + x0] = true;
            let mut queue = VecDeque::from([(x0, y0)]);
            let mut pixels = Vec::new();
            while let Some((x, y)) = queue.pop_front() {
                pixels.push((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            pixels.sort_unstable();
            let bbox = BBox {
                x_min: pixels.iter().map(|p| p.1).min().unwrap(),
                y_min: pixels.iter().map(|p| p.0).min().unwrap(),
                x_max: pixels.iter().map(|p| p.1).max().unwrap(),
                y_max: pixels.iter().map(|p| p.0).max().unwrap(),
            };
            out.push((pixels.clone(), pixels.len(), bbox));
        }
    }
    out
}

pub fn check_components(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0;
    for case in 0..cases {
        let density = rng.gen_range(0.05..0.75);
        let mask = random_mask(&mut rng, 32, 32, density);
        let expected = flood_fill_components(&mask);
        let got = connected_components(&mask);
        ensure(got.len() == expected.len(), || {
            format!("case {case}: {} components, flood fill finds {}", got.len(), expected.len())
        })?;
        for (i, (region, (pixels, area, bbox))) in got.iter().zip(&expected).enumerate() {
            let mut mine: Vec<(usize, usize)> = region.pixels().map(|(x, y)| (y, x)).collect();
            mine.sort_unstable();
            ensure(&mine == pixels, || format!("case {case}: component {i} pixel sets differ"))?;
            ensure(region.area == *area, || format!("case {case}: component {i} area {} vs {area}", region.area))?;
            ensure(region.bbox == *bbox, || format!("case {case}: component {i} bbox {:?} vs {bbox:?}", region.bbox))?;
        }
        total += got.len();
    }
    Ok(format!("{cases} random 32×32 masks ({total} components) identical to flood fill"))
}

// ---------------------------------------------------------------- segmentation metrics

pub fn check_seg_metrics(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let (da, db) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let a = random_mask(&mut rng, w, h, da);
        let b = random_mask(&mut rng, w, h, db);
        let (mut inter, mut union, mut na, mut nb) = (0u64, 0u64, 0u64, 0u64);
        for (&x, &y) in a.bits().iter().zip(b.bits()) {
            inter += u64::from(x && y);
            union += u64::from(x || y);
            na += u64::from(x);
            nb += u64::from(y);
        }
        let want_j = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        let want_d = if na + nb == 0 { 1.0 } else { 2.0 * inter as f64 / (na + nb) as f64 };
        let j = jaccard(&a, &b).map_err(|e| e.to_string())?;
        let d = dice(&a, &b).map_err(|e| e.to_string())?;
        ensure(j == want_j, || format!("case {case}: jaccard {j} vs pixel count {want_j}"))?;
        ensure(d == want_d, || format!("case {case}: dice {d} vs pixel count {want_d}"))?;
        ensure((d - 2.0 * j / (1.0 + j)).abs() <= 1e-12, || format!("case {case}: dice {d} ≠ 2j/(1+j) for j = {j}"))?;
        ensure(jaccard(&a, &a).unwrap() == 1.0 && dice(&a, &a).unwrap() == 1.0, || format!("case {case}: identity ≠ 1"))?;
        let complement = BinaryMask::new(w, h, a.bits().iter().map(|&v| !v).collect()).unwrap();
        if a.count() > 0 && complement.count() > 0 {
            ensure(
                jaccard(&a, &complement).unwrap() == 0.0 && dice(&a, &complement).unwrap() == 0.0,
                || format!("case {case}: disjoint ≠ 0"),
            )?;
        }
    }
    Ok(format!("{cases} random pairs match pixel counts; dice = 2j/(1+j) within 1e-12"))
}

// ---------------------------------------------------------------- focal loss

fn focal(probs: &[f64], labels: &[usize], weights: &[f64], gamma: f64) -> f64 {
    let k = weights.len();
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(&Tensor::new([labels.len(), k], probs.to_vec()).unwrap());
    let l = tape.focal_loss(p, labels, weights, gamma).unwrap();
    tape.value(l)[0]
}

pub fn check_focal_collapse(batches: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..batches {
        let n = rng.gen_range(1..17);
        let k = rng.gen_range(2..5);
        let mut probs = Vec::with_capacity(n * k);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            probs.extend(raw.iter().map(|v| v / s));
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let ce = -labels.iter().enumerate().map(|(i, &y)| probs[i * k + y].ln()).sum::<f64>() / n as f64;
        let got = focal(&probs, &labels, &vec![1.0; k], 0.0);
        worst = worst.max((got - ce).abs());
    }
    ensure(worst <= 1e-9, || format!("γ = 0 differs from cross-entropy by {worst:.3e}"))?;
    for gamma in [0.0, 0.5, 2.0, 5.0] {
        let l = focal(&[0.0, 1.0], &[1], &[1.0, 1.0], gamma);
        ensure(l == 0.0, || format!("loss(p = 1) = {l} at γ = {gamma}"))?;
    }
    let spot = focal(&[0.5, 0.5], &[0], &[1.0, 1.0], 2.0);
    let want = 0.25 * std::f64::consts::LN_2;
    ensure((spot - want).abs() <= 1e-9, || format!("loss(0.5, γ=2) = {spot}, expected {want}"))?;
    Ok(format!("{batches} batches: |focal(γ=0) − CE| ≤ {worst:.1e}; loss(p=1) = 0; spot {spot:.9}"))
}

// ---------------------------------------------------------------- Otsu

/// Exhaustive search in exact integer arithmetic: the between-class
/// variance at `t` is proportional to `(s0·n1 − s1·n0)² / (n0·n1)`.
pub fn exhaustive_otsu(grey: &[u8]) -> u8 {
    let n = grey.len() as u128;
    let total: u128 = grey.iter().map(|&g| u128::from(g)).sum();
    // best as a fraction num/den
    let (mut best_t, mut best_num, mut best_den) = (0u8, 0u128, 1u128);
    for t in 0..=255u8 {
        let (mut n0, mut s0) = (0u128, 0u128);
        for &g in grey {
            if g <= t {
                n0 += 1;
                s0 += u128::from(g);
            }
        }
        let (n1, s1) = (n - n0, total - s0);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 * n1).abs_diff(s1 * n0);
        let (num, den) = (diff * diff, n0 * n1);
        if num * best_den > best_num * den {
            best_t = t;
            best_num = num;
            best_den = den;
        }
    }
    best_t
}

pub fn random_image(rng: &mut ChaCha8Rng) -> RasterImage {
    let (w, h) = (rng.gen_range(1..48), rng.gen_range(1..48));
    let levels = rng.gen_range(1..6);
    let palette: Vec<[u8; 3]> = (0..levels).map(|_| rng.gen()).collect();
    let noise = rng.gen_range(0..60u8);
    let mut data = Vec::with_capacity(w * h * 3);
    for _ in 0..w * h {
        let base = palette[rng.gen_range(0..levels)];
        for c in base {
            let jitter = if noise == 0 { 0 } else { rng.gen_range(0..=noise) };
            data.push(c.saturating_add(jitter));
        }
    }
    RasterImage::new(w, h, data).unwrap()
}

pub fn check_otsu(cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let image = if case == 0 {
            RasterImage::filled(7, 5, [90, 120, 30])
        } else {
            random_image(&mut rng)
        };
        let grey: Vec<u8> = image.data().chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).collect();
        let want = exhaustive_otsu(&grey);
        for polarity in [Polarity::Dark, Polarity::Bright] {
            let got = otsu_threshold(&image, polarity);
            ensure(got.threshold == want, || format!("case {case}: threshold {} vs exhaustive {want}", got.threshold))?;
            let separable = grey.iter().any(|&g| g != grey[0]);
            for (i, &g) in grey.iter().enumerate() {
                let fg = separable
                    && match polarity {
                        Polarity::Dark => g <= want,
                        Polarity::Bright => g > want,
                    };
                ensure(got.mask.bits()[i] == fg, || format!("case {case}: mask differs at pixel {i}"))?;
            }
        }
    }
    Ok(format!("{cases} random images: threshold and mask equal the exhaustive search"))
}

// ---------------------------------------------------------------- checkpoints

use tbd_core::io::{load_checkpoint, save_checkpoint};
use tbd_core::unet::{UNet, UNetConfig};
use tbd_core::vit::{TBViT, ViTConfig};

fn random_batch(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

/// Moves every parameter, including the running statistics, off its
/// initial value so the round trip covers non-trivial contents.
fn perturb(store: &mut tbd_tensor::ParamStore<f32>, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
            if p.name.ends_with("running_var") {
                *v = v.abs() + 0.5;
            }
        }
    }
}

fn same_bits(a: &[f32], b: &[f32]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn check_checkpoint_fidelity(dir: &std::path::Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut unet = UNet::<f32>::new(UNetConfig::default(), 5).map_err(|e| e.to_string())?;
    perturb(unet.params_mut(), &mut rng);
    let x = random_batch(&mut rng, [2, 3, 64, 64]);
    let before = unet.predict(x.clone()).map_err(|e| e.to_string())?;
    save_checkpoint(&unet, &dir.join("unet")).map_err(|e| e.to_string())?;
    let loaded: UNet<f32> = load_checkpoint(&dir.join("unet")).map_err(|e| e.to_string())?;
    ensure(same_bits(&before, &loaded.predict(x).map_err(|e| e.to_string())?), || {
        "segmenter forward differs after reload".into()
    })?;

    let mut vit = TBViT::<f32>::new(ViTConfig::default(), 6).map_err(|e| e.to_string())?;
    perturb(vit.params_mut(), &mut rng);
    let x = random_batch(&mut rng, [5, 3, 32, 32]);
    let before_v = vit.predict(x.clone()).map_err(|e| e.to_string())?;
    save_checkpoint(&vit, &dir.join("vit")).map_err(|e| e.to_string())?;
    let loaded: TBViT<f32> = load_checkpoint(&dir.join("vit")).map_err(|e| e.to_string())?;
    ensure(same_bits(&before_v, &loaded.predict(x).map_err(|e| e.to_string())?), || {
        "classifier forward differs after reload".into()
    })?;
    Ok(format!(
        "segmenter ({} outputs) and classifier ({} outputs) bitwise identical after reload",
        before.len(),
        before_v.len()
    ))
}
