//! Synthetic geodata plus the per-run session the tool handlers operate on.

pub mod map;
pub mod ops;
pub mod raster;
pub mod regions;
pub mod session;
pub mod tools;
pub mod vision;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DataBounds;
use crate::types::{Cell, DataPointKey, DateRange, Period, Product, RegionRef};
use raster::{generate_background, mix, product_info, ProductInfo, Raster};
use vision::{ConfusionModel, Scene};

pub use map::MapState;
pub use session::{AccessRecorder, ErrorCode, HandleData, SandboxSession, ToolError, ToolOutput};

/// Date attached to vision datapoints.
pub const VISION_DATE: Period = Period { year: 2024, month: None };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxConfig {
    pub seed: u64,
    pub rows: u32,
    pub cols: u32,
    #[serde(default)]
    pub vision: ConfusionModel,
}

impl Default for SandboxConfig {
    fn default() -> Self {
        SandboxConfig { seed: 7, rows: 64, cols: 64, vision: ConfusionModel::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotifKind {
    LowNdvi,
    BrightB2,
    Hot,
    Haze,
    DenseBuilt,
    Crowded,
    Scar,
}

impl MotifKind {
    pub const ALL: [MotifKind; 7] = [
        MotifKind::LowNdvi,
        MotifKind::BrightB2,
        MotifKind::Hot,
        MotifKind::Haze,
        MotifKind::DenseBuilt,
        MotifKind::Crowded,
        MotifKind::Scar,
    ];

    fn key(self) -> &'static str {
        match self {
            MotifKind::LowNdvi => "low_ndvi",
            MotifKind::BrightB2 => "bright_b2",
            MotifKind::Hot => "hot",
            MotifKind::Haze => "haze",
            MotifKind::DenseBuilt => "dense_built",
            MotifKind::Crowded => "crowded",
            MotifKind::Scar => "scar",
        }
    }

    /// Products overwritten by this motif and the planted value.
    pub fn plants(self) -> &'static [(Product, f64)] {
        match self {
            MotifKind::LowNdvi => &[(Product::Ndvi, 0.05)],
            MotifKind::BrightB2 => &[(Product::RefB2, 0.6)],
            MotifKind::Hot => &[(Product::Lst, 314.0)],
            MotifKind::Haze => &[(Product::Aod550, 1.2)],
            MotifKind::DenseBuilt => &[(Product::BuiltS, 850_000.0)],
            MotifKind::Crowded => &[(Product::Population, 18_000.0)],
            MotifKind::Scar => &[(Product::Canopy, 8.0), (Product::Treeloss, 1.0)],
        }
    }
}

/// A planted patch whose location is part of the fixture ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub kind: MotifKind,
    pub region: RegionRef,
    pub cells: Vec<Cell>,
}

const SHAPES: [&[(u32, u32)]; 3] = [&[(0, 0), (1, 0), (1, 1)], &[(0, 0), (0, 1), (1, 0), (1, 1)], &[(0, 0), (0, 1), (0, 2)]];

fn place_motif(seed: u64, kind: MotifKind, region: &RegionRef, cells: &BTreeSet<Cell>) -> Motif {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[b"motif", region.as_str().as_bytes(), kind.key().as_bytes()]));
    let shape = SHAPES[rng.random_range(0..SHAPES.len())];
    let list: Vec<Cell> = cells.iter().copied().collect();
    let mut best: Vec<Cell> = Vec::new();
    for _ in 0..64 {
        let a = list[rng.random_range(0..list.len())];
        let placed: Vec<Cell> = shape
            .iter()
            .map(|(dr, dc)| Cell::new(a.row + dr, a.col + dc))
            .filter(|c| cells.contains(c))
            .collect();
        if placed.len() > best.len() {
            best = placed;
        }
        if best.len() == shape.len() {
            break;
        }
    }
    best.sort();
    Motif { kind, region: region.clone(), cells: best }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureMetadata {
    pub seed: u64,
    pub rows: u32,
    pub cols: u32,
    pub products: Vec<ProductInfo>,
    pub regions: BTreeMap<RegionRef, BTreeSet<Cell>>,
    pub motifs: Vec<Motif>,
    pub scenes: Vec<Scene>,
    pub vision_model: ConfusionModel,
}

impl FixtureMetadata {
    pub fn dates(&self, product: Product) -> Vec<Period> {
        if !product.is_raster() {
            return vec![VISION_DATE];
        }
        self.products.iter().find(|p| p.product == product).map(|p| p.dates.clone()).unwrap_or_default()
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn motif(&self, kind: MotifKind, region: &str) -> Option<&Motif> {
        self.motifs.iter().find(|m| m.kind == kind && m.region.as_str() == region)
    }
}

/// Immutable fixture shared read-only by all runs.
#[derive(Debug, Clone)]
pub struct Sandbox {
    config: SandboxConfig,
    rasters: BTreeMap<Product, Raster>,
    regions: BTreeMap<RegionRef, BTreeSet<Cell>>,
    motifs: Vec<Motif>,
    scenes: Vec<Scene>,
}

impl Sandbox {
    pub fn new(config: SandboxConfig) -> Self {
        assert!(config.rows > 0 && config.cols > 0, "grid must be nonempty");
        let regions = regions::all_regions(config.rows, config.cols);
        let mut rasters: BTreeMap<Product, Raster> = Product::RASTER
            .iter()
            .map(|p| (*p, generate_background(*p, config.seed, config.rows, config.cols).expect("raster product")))
            .collect();
        let mut motifs = Vec::new();
        for (region, cells) in &regions {
            for kind in MotifKind::ALL {
                let m = place_motif(config.seed, kind, region, cells);
                for (product, value) in kind.plants() {
                    let r = rasters.get_mut(product).expect("raster product");
                    for d in 0..r.dates.len() {
                        for c in &m.cells {
                            r.set(d, *c, *value);
                        }
                    }
                }
                motifs.push(m);
            }
        }
        let region_list: Vec<(RegionRef, BTreeSet<Cell>)> = regions.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let scenes = vision::generate_scenes(config.seed, &region_list);
        Sandbox { config, rasters, regions, motifs, scenes }
    }

    pub fn config(&self) -> &SandboxConfig {
        &self.config
    }

    pub fn raster(&self, product: Product) -> Option<&Raster> {
        self.rasters.get(&product)
    }

    pub fn region(&self, name: &str) -> Option<&BTreeSet<Cell>> {
        self.regions.get(&RegionRef::new(name))
    }

    pub fn regions(&self) -> &BTreeMap<RegionRef, BTreeSet<Cell>> {
        &self.regions
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.motifs
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.scenes
    }

    pub fn scene(&self, id: &str) -> Option<&Scene> {
        let id = id.trim().to_lowercase();
        self.scenes.iter().find(|s| s.id == id)
    }

    pub fn coverage(&self, product: Product) -> Vec<Period> {
        match self.rasters.get(&product) {
            Some(r) => r.dates.clone(),
            None => vec![VISION_DATE],
        }
    }

    /// Covered dates selected by `range`. A year-granular range over a
    /// monthly product selects every month of those years.
    pub fn dates_in(&self, product: Product, range: &DateRange) -> Option<Vec<Period>> {
        let cov = self.coverage(product);
        let monthly = cov.first().is_some_and(|p| p.month.is_some());
        let year_range = range.start.month.is_none();
        let sel: Vec<Period> = if monthly && year_range {
            cov.into_iter().filter(|p| range.start.year <= p.year && p.year <= range.end.year).collect()
        } else {
            if !cov.contains(&range.start) || !cov.contains(&range.end) {
                return None;
            }
            cov.into_iter().filter(|p| range.contains(*p)).collect()
        };
        (!sel.is_empty()).then_some(sel)
    }

    pub fn metadata(&self) -> FixtureMetadata {
        FixtureMetadata {
            seed: self.config.seed,
            rows: self.config.rows,
            cols: self.config.cols,
            products: Product::RASTER.iter().filter_map(|p| product_info(*p)).collect(),
            regions: self.regions.clone(),
            motifs: self.motifs.clone(),
            scenes: self.scenes.clone(),
            vision_model: self.config.vision,
        }
    }

    pub fn write_metadata(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(&self.metadata()).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    /// Hex SHA-256 over every raster value and the metadata document.
    pub fn fixture_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in self.rasters.values() {
            h.update(r.product.key().as_bytes());
            h.update(r.to_bytes());
        }
        h.update(serde_json::to_vec(&self.metadata()).expect("metadata serializes"));
        hex(&h.finalize())
    }

    /// One CSV row per grid row for inspection.
    pub fn grid_csv(&self, product: Product, date: Period) -> Option<String> {
        let r = self.rasters.get(&product)?;
        let d = r.date_index(date)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in 0..r.rows {
            let rec: Vec<String> = (0..r.cols).map(|c| format!("{}", r.value(d, Cell::new(row, c)))).collect();
            w.write_record(&rec).ok()?;
        }
        String::from_utf8(w.into_inner().ok()?).ok()
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl DataBounds for Sandbox {
    fn contains(&self, key: &DataPointKey) -> bool {
        key.cell.row < self.config.rows && key.cell.col < self.config.cols && self.coverage(key.product).contains(&key.date)
    }
}
