use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BBox, BinaryMask, RasterImage};

/// Synthetic smear: curved pink-red rods (the bacilli, marked in the mask)
/// and round blobs of the same palette (distractors, not marked) on a noisy
/// blue-cyan background. All ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub bacilli: (usize, usize),
    pub rod_length: (f64, f64),
    pub rod_width: (f64, f64),
    /// Maximum sideways bow of the rod's midpoint as a fraction of its length.
    pub max_curvature: f64,
    pub distractors: (usize, usize),
    pub distractor_radius: (f64, f64),
    /// Amplitude of per-pixel background noise, in grey levels.
    pub noise: f64,
    /// Minimum gap in pixels between any two placed objects.
    pub margin: usize,
    pub rod_color: [u8; 3],
    pub background_color: [u8; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            bacilli: (4, 10),
            rod_length: (10.0, 24.0),
            rod_width: (3.0, 5.0),
            max_curvature: 0.2,
            distractors: (1, 3),
            distractor_radius: (5.0, 8.0),
            noise: 12.0,
            margin: 3,
            rod_color: [196, 52, 104],
            background_color: [150, 200, 215],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(a, b): (f64, f64)| a > 0.0 && a <= b;
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("synthetic images must be at least 16x16".into()));
        }
        if self.bacilli.0 > self.bacilli.1 || self.distractors.0 > self.distractors.1 {
            return Err(Error::Config("synthetic count ranges must satisfy min ≤ max".into()));
        }
        if !ordered(self.rod_length) || !ordered(self.rod_width) || !ordered(self.distractor_radius) {
            return Err(Error::Config(
                "synthetic size ranges must be positive with min ≤ max".into(),
            ));
        }
        let longest = self.rod_length.1.max(2.0 * self.distractor_radius.1) + 2.0 * self.rod_width.1;
        if longest + 2.0 >= self.width.min(self.height) as f64 {
            return Err(Error::Config("synthetic objects do not fit in the image".into()));
        }
        if !(0.0..=0.5).contains(&self.max_curvature) || self.noise < 0.0 {
            return Err(Error::Config("synthetic curvature must lie in [0, 0.5] and noise ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Bacillus,
    Distractor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthComponent {
    pub kind: ComponentKind,
    pub bbox: BBox,
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub components: Vec<SynthComponent>,
}

const MAX_ATTEMPTS: usize = 200;
const CURVE_SEGMENTS: usize = 24;

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Pixels whose centre lies within `radius` of the polyline.
fn stroke_pixels(poly: &[(f64, f64)], radius: f64, w: usize, h: usize) -> Option<Vec<(usize, usize)>> {
    let xs = poly.iter().map(|p| p.0);
    let ys = poly.iter().map(|p| p.1);
    let x0 = (xs.clone().fold(f64::INFINITY, f64::min) - radius).floor();
    let x1 = (xs.fold(f64::NEG_INFINITY, f64::max) + radius).ceil();
    let y0 = (ys.clone().fold(f64::INFINITY, f64::min) - radius).floor();
    let y1 = (ys.fold(f64::NEG_INFINITY, f64::max) + radius).ceil();
    if x0 < 1.0 || y0 < 1.0 || x1 > (w - 2) as f64 || y1 > (h - 2) as f64 {
        return None;
    }
    let mut out = Vec::new();
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            let c = (x as f64 + 0.5, y as f64 + 0.5);
            let d = poly
                .windows(2)
                .map(|s| dist_to_segment(c, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            if d <= radius {
                out.push((x, y));
            }
        }
    }
    Some(out)
}

fn rod_polyline(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let len = rng.gen_range(cfg.rod_length.0..=cfg.rod_length.1);
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    let bow = rng.gen_range(-cfg.max_curvature..=cfg.max_curvature) * len;
    let cx = rng.gen_range(0.0..cfg.width as f64);
    let cy = rng.gen_range(0.0..cfg.height as f64);
    let (ux, uy) = (angle.cos(), angle.sin());
    let p0 = (cx - ux * len / 2.0, cy - uy * len / 2.0);
    let p2 = (cx + ux * len / 2.0, cy + uy * len / 2.0);
    // quadratic Bézier whose midpoint is displaced by `bow`
    let p1 = (cx - uy * 2.0 * bow, cy + ux * 2.0 * bow);
    (0..=CURVE_SEGMENTS)
        .map(|i| {
            let t = i as f64 / CURVE_SEGMENTS as f64;
            let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
            (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
        })
        .collect()
}

fn bbox_of(pixels: &[(usize, usize)]) -> BBox {
    BBox {
        x_min: pixels.iter().map(|p| p.0).min().unwrap_or(0),
        y_min: pixels.iter().map(|p| p.1).min().unwrap_or(0),
        x_max: pixels.iter().map(|p| p.0).max().unwrap_or(0),
        y_max: pixels.iter().map(|p| p.1).max().unwrap_or(0),
    }
}

/// Reserves each pixel and its `margin` neighbourhood; fails if any of the
/// pixels themselves is already reserved.
fn try_reserve(occupied: &mut [bool], w: usize, h: usize, pixels: &[(usize, usize)], margin: usize) -> bool {
    if pixels.is_empty() || pixels.iter().any(|&(x, y)| occupied[y * w + x]) {
        return false;
    }
    for &(x, y) in pixels {
        for yy in y.saturating_sub(margin)..=(y + margin).min(h - 1) {
            for xx in x.saturating_sub(margin)..=(x + margin).min(w - 1) {
                occupied[yy * w + xx] = true;
            }
        }
    }
    true
}

fn jitter(rng: &mut ChaCha8Rng, base: [u8; 3], amount: f64) -> [u8; 3] {
    let mut out = [0; 3];
    for c in 0..3 {
        let v = f64::from(base[c]) + rng.gen_range(-amount..=amount);
        out[c] = v.round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Generates one image. Objects that cannot be placed without touching an
/// earlier one within `MAX_ATTEMPTS` tries are skipped, so the returned
/// components list is authoritative.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // smooth illumination gradient plus per-pixel triangular noise
    let gx = rng.gen_range(-12.0..12.0);
    let gy = rng.gen_range(-12.0..12.0);
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            let shade = gx * (x as f64 / w as f64 - 0.5) + gy * (y as f64 / h as f64 - 0.5);
            for c in 0..3 {
                let n = (rng.gen::<f64>() + rng.gen::<f64>() - 1.0) * cfg.noise;
                let v = f64::from(cfg.background_color[c]) + shade + n;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let mut image = RasterImage::new(w, h, data)?;
    let mut mask = BinaryMask::empty(w, h);
    let mut occupied = vec![false; w * h];
    let mut components = Vec::new();

    let n_rods = rng.gen_range(cfg.bacilli.0..=cfg.bacilli.1);
    let n_blobs = rng.gen_range(cfg.distractors.0..=cfg.distractors.1);
    for kind in std::iter::repeat_n(ComponentKind::Bacillus, n_rods)
        .chain(std::iter::repeat_n(ComponentKind::Distractor, n_blobs))
    {
        for _ in 0..MAX_ATTEMPTS {
            let pixels = match kind {
                ComponentKind::Bacillus => {
                    let poly = rod_polyline(&mut rng, cfg);
                    let width = rng.gen_range(cfg.rod_width.0..=cfg.rod_width.1);
                    stroke_pixels(&poly, width / 2.0, w, h)
                }
                ComponentKind::Distractor => {
                    let r = rng.gen_range(cfg.distractor_radius.0..=cfg.distractor_radius.1);
                    let c = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
                    stroke_pixels(&[c, c], r, w, h)
                }
            };
            let Some(pixels) = pixels else { continue };
            if !try_reserve(&mut occupied, w, h, &pixels, cfg.margin) {
                continue;
            }
            let color = jitter(&mut rng, cfg.rod_color, 18.0);
            for &(x, y) in &pixels {
                image.set_pixel(x, y, jitter(&mut rng, color, 10.0));
                if kind == ComponentKind::Bacillus {
                    mask.set(x, y, true);
                }
            }
            components.push(SynthComponent {
                kind,
                bbox: bbox_of(&pixels),
                area: pixels.len(),
            });
            break;
        }
    }
    Ok(SynthSample {
        image,
        mask,
        components,
    })
}
