use serde::{Deserialize, Serialize};

use super::raster::BinaryMask;

/// Inclusive bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }
}

/// Horizontal run of foreground pixels `x_start..=x_end` on row `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub y: usize,
    pub x_start: usize,
    pub x_end: usize,
}

/// One 8-connected component, stored as row-major runs.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub runs: Vec<Run>,
    pub area: usize,
    pub bbox: BBox,
}

impl Region {
    /// Builds a region from its runs; `runs` must be non-empty.
    pub fn from_runs(id: usize, mut runs: Vec<Run>) -> Self {
        runs.sort_by_key(|r| (r.y, r.x_start));
        let area = runs.iter().map(|r| r.x_end - r.x_start + 1).sum();
        let bbox = BBox {
            x_min: runs.iter().map(|r| r.x_start).min().unwrap_or(0),
            y_min: runs.first().map_or(0, |r| r.y),
            x_max: runs.iter().map(|r| r.x_end).max().unwrap_or(0),
            y_max: runs.last().map_or(0, |r| r.y),
        };
        Self { id, runs, area, bbox }
    }

    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.runs
            .iter()
            .flat_map(|r| (r.x_start..=r.x_end).map(move |x| (x, r.y)))
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Labels 8-connected foreground components. Runs on adjacent rows are
/// merged with a union-find when their column ranges touch diagonally or
/// overlap. Region ids follow the first pixel of each component in a
/// row-major scan.
pub fn connected_components(mask: &BinaryMask) -> Vec<Region> {
    let (w, h) = (mask.width(), mask.height());
    let mut runs: Vec<Run> = Vec::new();
    let mut row_start = Vec::with_capacity(h + 1);
    for y in 0..h {
        row_start.push(runs.len());
        let row = &mask.bits()[y * w..(y + 1) * w];
        let mut x = 0;
        while x < w {
            if row[x] {
                let s = x;
                while x < w && row[x] {
                    x += 1;
                }
                runs.push(Run { y, x_start: s, x_end: x - 1 });
            } else {
                x += 1;
            }
        }
    }
    row_start.push(runs.len());

    let mut parent: Vec<usize> = (0..runs.len()).collect();
    for y in 1..h {
        let prev = row_start[y - 1]..row_start[y];
        let cur = row_start[y]..row_start[y + 1];
        let mut j = prev.start;
        for i in cur {
            let r = runs[i];
            // skip previous-row runs that end more than one column left of r
            while j < prev.end && runs[j].x_end + 1 < r.x_start {
                j += 1;
            }
            let mut k = j;
            while k < prev.end && runs[k].x_start <= r.x_end + 1 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, k));
                if a != b {
                    // keep the earlier run as root so ids follow scan order
                    let (lo, hi) = (a.min(b), a.max(b));
                    parent[hi] = lo;
                }
                k += 1;
            }
        }
    }

    // Runs are in scan order, so the first run of each component carries its
    // first pixel; roots are the minimal run index of each component.
    let mut label = vec![usize::MAX; runs.len()];
    let mut grouped: Vec<Vec<Run>> = Vec::new();
    for i in 0..runs.len() {
        let root = find(&mut parent, i);
        if label[root] == usize::MAX {
            label[root] = grouped.len();
            grouped.push(Vec::new());
        }
        grouped[label[root]].push(runs[i]);
    }
    grouped
        .into_iter()
        .enumerate()
        .map(|(id, runs)| Region::from_runs(id, runs))
        .collect()
}

/// Keeps regions whose area is strictly above `min_area`.
pub fn filter_regions_by_area(regions: Vec<Region>, min_area: f64) -> Vec<Region> {
    regions
        .into_iter()
        .filter(|r| r.area as f64 > min_area)
        .collect()
}

/// Area threshold for `patch_side`-pixel patches, given the threshold
/// `base_area` defined at 256-pixel patches.
pub fn scaled_min_area(base_area: f64, patch_side: usize) -> f64 {
    let s = patch_side as f64 / 256.0;
    base_area * s * s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> BinaryMask {
        let w = rows[0].len();
        BinaryMask::new(
            w,
            rows.len(),
            rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(connected_components(&BinaryMask::empty(7, 5)).is_empty());
    }

    #[test]
    fn rectangle_is_one_region() {
        let mut m = BinaryMask::empty(10, 10);
        for y in 2..6 {
            for x in 3..8 {
                m.set(x, y, true);
            }
        }
        let r = connected_components(&m);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area, 20);
        assert_eq!(r[0].bbox, BBox { x_min: 3, y_min: 2, x_max: 7, y_max: 5 });
    }

    #[test]
    fn diagonal_neighbours_connect() {
        let r = connected_components(&mask(&["#..", ".#.", "..#"]));
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].area, 3);
    }

    #[test]
    fn ids_follow_first_pixel_in_scan_order() {
        // the U shape's first pixel (0,0) precedes the lone pixel at (2,0)
        // even though its right arm is only joined on the last row
        let r = connected_components(&mask(&["#.#.#", "#...#", "#####"]));
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].bbox, BBox { x_min: 0, y_min: 0, x_max: 4, y_max: 2 });
        assert_eq!(r[1].area, 1);
        assert_eq!((r[1].bbox.x_min, r[1].bbox.y_min), (2, 0));
    }

    #[test]
    fn area_filter_is_strict() {
        let region = |id: usize, area: usize| Region::from_runs(id, vec![Run { y: id, x_start: 0, x_end: area - 1 }]);
        let kept = filter_regions_by_area(vec![region(0, 199), region(1, 200), region(2, 201)], 200.0);
        assert_eq!(kept.iter().map(|r| r.area).collect::<Vec<_>>(), vec![201]);
        let all = filter_regions_by_area(vec![region(0, 1), region(1, 2)], 0.0);
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn min_area_scales_quadratically() {
        assert_eq!(scaled_min_area(200.0, 256), 200.0);
        assert_eq!(scaled_min_area(200.0, 64), 12.5);
    }
}
