//! Named region masks.
//!
//! Masks are unions of rectangles drawn on a 64×64 reference frame and scaled
//! to the actual grid size.

use std::collections::{BTreeMap, BTreeSet};

use crate::types::{Cell, RegionRef};

const FRAME: u32 = 64;

/// (row0, col0, row1, col1), end-exclusive, on the reference frame.
type Rect = (u32, u32, u32, u32);

pub const REGION_NAMES: [&str; 8] =
    ["brisbane", "bundaberg", "gympie", "ipswich", "sydney", "melbourne", "eastbank", "westmoor"];

fn rects(name: &str) -> &'static [Rect] {
    match name {
        "brisbane" => &[(8, 40, 20, 54), (20, 44, 24, 50)],
        "bundaberg" => &[(0, 44, 7, 56)],
        "gympie" => &[(0, 30, 8, 40)],
        "ipswich" => &[(10, 28, 22, 38)],
        "sydney" => &[(30, 40, 42, 52), (42, 42, 46, 48)],
        "melbourne" => &[(48, 8, 60, 22)],
        "eastbank" => &[(30, 56, 44, 64)],
        "westmoor" => &[(26, 0, 40, 12), (40, 4, 46, 10)],
        _ => &[],
    }
}

fn scale(v: u32, n: u32) -> u32 {
    v * n / FRAME
}

fn scale_end(v: u32, n: u32) -> u32 {
    (v * n).div_ceil(FRAME)
}

pub fn region_mask(name: &str, rows: u32, cols: u32) -> Option<BTreeSet<Cell>> {
    let rs = rects(name);
    if rs.is_empty() {
        return None;
    }
    let mut out = BTreeSet::new();
    for &(r0, c0, r1, c1) in rs {
        let (r0s, c0s) = (scale(r0, rows), scale(c0, cols));
        let r1s = scale_end(r1, rows).max(r0s + 1).min(rows);
        let c1s = scale_end(c1, cols).max(c0s + 1).min(cols);
        for r in r0s..r1s {
            for c in c0s..c1s {
                out.insert(Cell::new(r, c));
            }
        }
    }
    Some(out)
}

pub fn all_regions(rows: u32, cols: u32) -> BTreeMap<RegionRef, BTreeSet<Cell>> {
    REGION_NAMES
        .iter()
        .map(|n| (RegionRef::new(n), region_mask(n, rows, cols).expect("known region")))
        .collect()
}

/// Northwest-most cell of the region; anchor for markers.
pub fn region_anchor(cells: &BTreeSet<Cell>) -> Option<Cell> {
    cells.iter().next().copied()
}
