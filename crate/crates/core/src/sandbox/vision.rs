//! Scene annotations and the seeded detector / classifier stub.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::raster::mix;
use crate::types::{Cell, RegionRef};

pub const SCENE_SIZE: u32 = 256;
pub const SCENES_PER_REGION: u32 = 4;
const SLOT: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Airplane,
    Ship,
    Vehicle,
    Building,
    StorageTank,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 5] =
        [ObjectClass::Airplane, ObjectClass::Ship, ObjectClass::Vehicle, ObjectClass::Building, ObjectClass::StorageTank];

    pub fn key(self) -> &'static str {
        match self {
            ObjectClass::Airplane => "airplane",
            ObjectClass::Ship => "ship",
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Building => "building",
            ObjectClass::StorageTank => "storage_tank",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            ObjectClass::Airplane => "airplanes",
            ObjectClass::Ship => "ships",
            ObjectClass::Vehicle => "vehicles",
            ObjectClass::Building => "buildings",
            ObjectClass::StorageTank => "storage tanks",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let n: String = s.trim().to_lowercase().chars().filter(|c| c.is_ascii_alphabetic()).collect();
        let n = n.strip_suffix('s').unwrap_or(&n);
        Ok(match n {
            "airplane" | "aiplane" | "plane" | "aircraft" => ObjectClass::Airplane,
            "ship" | "boat" => ObjectClass::Ship,
            "vehicle" | "car" => ObjectClass::Vehicle,
            "building" => ObjectClass::Building,
            "storagetank" | "tank" => ObjectClass::StorageTank,
            _ => return Err(format!("unknown object class '{s}'")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandCover {
    Cropland,
    Forest,
    Urban,
    Water,
    Grassland,
    Bare,
}

impl LandCover {
    pub const ALL: [LandCover; 6] =
        [LandCover::Cropland, LandCover::Forest, LandCover::Urban, LandCover::Water, LandCover::Grassland, LandCover::Bare];

    pub fn key(self) -> &'static str {
        match self {
            LandCover::Cropland => "cropland",
            LandCover::Forest => "forest",
            LandCover::Urban => "urban",
            LandCover::Water => "water",
            LandCover::Grassland => "grassland",
            LandCover::Bare => "bare",
        }
    }
}

impl FromStr for LandCover {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LandCover::ALL
            .into_iter()
            .find(|l| l.key() == s.trim().to_lowercase())
            .ok_or_else(|| format!("unknown land cover '{s}'"))
    }
}

/// Pixel box, end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub class: ObjectClass,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BBox {
    pub fn area(&self) -> u64 {
        (self.x1.saturating_sub(self.x0) as u64) * (self.y1.saturating_sub(self.y0) as u64)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let w = self.x1.min(o.x1).saturating_sub(self.x0.max(o.x0)) as u64;
        let h = self.y1.min(o.y1).saturating_sub(self.y0.max(o.y0)) as u64;
        let inter = w * h;
        let union = self.area() + o.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub region: RegionRef,
    pub cell: Cell,
    pub landcover: LandCover,
    pub boxes: Vec<BBox>,
}

impl Scene {
    pub fn truth(&self, class: ObjectClass) -> Vec<BBox> {
        self.boxes.iter().filter(|b| b.class == class).copied().collect()
    }
}

/// Stub detector/classifier quality. 1.0 everywhere is the perfect stub.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionModel {
    pub recall: f64,
    pub precision: f64,
    pub lcc_accuracy: f64,
    pub seed: u64,
}

impl ConfusionModel {
    pub fn perfect() -> Self {
        ConfusionModel { recall: 1.0, precision: 1.0, lcc_accuracy: 1.0, seed: 0 }
    }
}

impl Default for ConfusionModel {
    fn default() -> Self {
        ConfusionModel { recall: 0.9, precision: 0.9, lcc_accuracy: 0.9, seed: 0 }
    }
}

fn slot_box(class: ObjectClass, slot: u32, rng: &mut ChaCha8Rng) -> BBox {
    let per_row = SCENE_SIZE / SLOT;
    let (sx, sy) = ((slot % per_row) * SLOT, (slot / per_row) * SLOT);
    let w = rng.random_range(14..=26);
    let h = rng.random_range(14..=26);
    let ox = rng.random_range(0..=(SLOT - w));
    let oy = rng.random_range(0..=(SLOT - h));
    BBox { class, x0: sx + ox, y0: sy + oy, x1: sx + ox + w, y1: sy + oy + h }
}

/// Truth annotations for every region: each class appears 1 to 3 times in
/// each scene, every box in its own 32-pixel slot.
pub fn generate_scenes(seed: u64, regions: &[(RegionRef, BTreeSet<Cell>)]) -> Vec<Scene> {
    let mut out = Vec::new();
    let slots = (SCENE_SIZE / SLOT) * (SCENE_SIZE / SLOT);
    for (region, cells) in regions {
        let cells: Vec<Cell> = cells.iter().copied().collect();
        for k in 1..=SCENES_PER_REGION {
            let id = format!("{}-{k}", region.as_str());
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[b"scene", id.as_bytes()]));
            let cell = cells[rng.random_range(0..cells.len())];
            let landcover = LandCover::ALL[rng.random_range(0..LandCover::ALL.len())];
            let mut free: Vec<u32> = (0..slots).collect();
            let mut boxes = Vec::new();
            for class in ObjectClass::ALL {
                for _ in 0..rng.random_range(1..=3) {
                    let slot = free.swap_remove(rng.random_range(0..free.len()));
                    boxes.push(slot_box(class, slot, &mut rng));
                }
            }
            out.push(Scene { id, region: region.clone(), cell, landcover, boxes });
        }
    }
    out
}

/// Seeded detector: keeps each truth with probability `recall`, then adds
/// round(tp × (1 − precision) / precision) false positives in unused slots.
pub fn detect(scene: &Scene, class: ObjectClass, model: &ConfusionModel) -> Vec<BBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(model.seed, &[b"detect", scene.id.as_bytes(), class.key().as_bytes()]));
    let mut out: Vec<BBox> = scene.truth(class).into_iter().filter(|_| rng.random::<f64>() < model.recall).collect();
    let tp = out.len();
    let fp = if model.precision >= 1.0 || model.precision <= 0.0 {
        0
    } else {
        (tp as f64 * (1.0 - model.precision) / model.precision).round() as usize
    };
    let per_row = SCENE_SIZE / SLOT;
    let used: BTreeSet<u32> = scene.boxes.iter().map(|b| (b.y0 / SLOT) * per_row + b.x0 / SLOT).collect();
    let mut free: Vec<u32> = (0..per_row * per_row).filter(|s| !used.contains(s)).collect();
    for _ in 0..fp.min(free.len()) {
        let slot = free.swap_remove(rng.random_range(0..free.len()));
        out.push(slot_box(class, slot, &mut rng));
    }
    out
}

pub fn classify(scene: &Scene, model: &ConfusionModel) -> LandCover {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(model.seed, &[b"lcc", scene.id.as_bytes()]));
    if rng.random::<f64>() < model.lcc_accuracy {
        return scene.landcover;
    }
    let others: Vec<LandCover> = LandCover::ALL.into_iter().filter(|l| *l != scene.landcover).collect();
    others[rng.random_range(0..others.len())]
}

/// Greedy same-class matching at IoU ≥ 0.5, highest IoU first.
/// Returns (tp, fp, fn).
pub fn match_boxes(pred: &[BBox], truth: &[BBox]) -> (usize, usize, usize) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            if p.class == t.class {
                let iou = p.iou(t);
                if iou >= 0.5 {
                    pairs.push((iou, i, j));
                }
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut pu, mut tu) = (vec![false; pred.len()], vec![false; truth.len()]);
    let mut tp = 0;
    for (_, i, j) in pairs {
        if !pu[i] && !tu[j] {
            pu[i] = true;
            tu[j] = true;
            tp += 1;
        }
    }
    (tp, pred.len() - tp, truth.len() - tp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenes() -> Vec<Scene> {
        let cells: BTreeSet<Cell> = (0..4).flat_map(|r| (0..4).map(move |c| Cell::new(r, c))).collect();
        generate_scenes(5, &[(RegionRef::new("sydney"), cells)])
    }

    #[test]
    fn boxes_are_in_bounds_and_disjoint() {
        for s in scenes() {
            for (i, a) in s.boxes.iter().enumerate() {
                assert!(a.x1 <= SCENE_SIZE && a.y1 <= SCENE_SIZE);
                for b in &s.boxes[i + 1..] {
                    assert_eq!(a.iou(b), 0.0);
                }
            }
            for c in ObjectClass::ALL {
                assert!((1..=3).contains(&s.truth(c).len()));
            }
        }
    }

    #[test]
    fn perfect_model_returns_truth() {
        let s = &scenes()[0];
        let m = ConfusionModel::perfect();
        let d = detect(s, ObjectClass::Airplane, &m);
        assert_eq!(d, s.truth(ObjectClass::Airplane));
        assert_eq!(match_boxes(&d, &s.truth(ObjectClass::Airplane)), (d.len(), 0, 0));
        assert_eq!(classify(s, &m), s.landcover);
    }

    #[test]
    fn imperfect_model_is_seeded_and_consistent() {
        let m = ConfusionModel { recall: 0.5, precision: 0.5, lcc_accuracy: 0.0, seed: 3 };
        for s in scenes() {
            let truth = s.truth(ObjectClass::Vehicle);
            let d = detect(&s, ObjectClass::Vehicle, &m);
            assert_eq!(d, detect(&s, ObjectClass::Vehicle, &m));
            let kept = d.iter().filter(|b| truth.contains(b)).count();
            // precision 0.5: one false positive per kept truth
            assert_eq!(d.len(), 2 * kept);
            assert_eq!(match_boxes(&d, &truth), (kept, kept, truth.len() - kept));
            assert_ne!(classify(&s, &m), s.landcover);
        }
    }

    #[test]
    fn iou_basics() {
        let a = BBox { class: ObjectClass::Ship, x0: 0, y0: 0, x1: 10, y1: 10 };
        let b = BBox { class: ObjectClass::Ship, x0: 5, y0: 0, x1: 15, y1: 10 };
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert!((a.iou(&b) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn class_aliases() {
        assert_eq!("aiplanes".parse::<ObjectClass>().unwrap(), ObjectClass::Airplane);
        assert_eq!("storage tanks".parse::<ObjectClass>().unwrap(), ObjectClass::StorageTank);
    }
}
