//! Synthetic raster products.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::types::{Cell, Period, Product};

/// Static description of a gridded product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductInfo {
    pub product: Product,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub dates: Vec<Period>,
}

pub fn monthly_2024() -> Vec<Period> {
    (1..=12).map(|m| Period::month(2024, m)).collect()
}

pub fn product_info(product: Product) -> Option<ProductInfo> {
    let (unit, min, max) = match product {
        Product::Ndvi => ("dimensionless", -0.2, 1.0),
        Product::RefB2 => ("reflectance", 0.0, 1.0),
        Product::Lst => ("kelvin", 250.0, 340.0),
        Product::Aod550 => ("dimensionless", 0.0, 5.0),
        Product::BuiltS => ("m2 per cell", 0.0, 1.0e6),
        Product::Population => ("persons per cell", 0.0, 50_000.0),
        Product::Canopy => ("percent", 0.0, 100.0),
        Product::Treeloss => ("binary", 0.0, 1.0),
        Product::Detection | Product::Lcc => return None,
    };
    let dates = match product {
        Product::Ndvi | Product::RefB2 | Product::Lst | Product::Aod550 => monthly_2024(),
        _ => vec![Period::year(2020)],
    };
    Some(ProductInfo { product, unit: unit.into(), min, max, dates })
}

/// Values for one product, one layer per covered date, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub product: Product,
    pub rows: u32,
    pub cols: u32,
    pub dates: Vec<Period>,
    pub layers: Vec<Vec<f64>>,
}

impl Raster {
    pub fn index(&self, cell: Cell) -> usize {
        (cell.row * self.cols + cell.col) as usize
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.rows && cell.col < self.cols
    }

    pub fn date_index(&self, date: Period) -> Option<usize> {
        self.dates.iter().position(|d| *d == date)
    }

    pub fn value(&self, date_idx: usize, cell: Cell) -> f64 {
        self.layers[date_idx][self.index(cell)]
    }

    pub fn set(&mut self, date_idx: usize, cell: Cell, v: f64) {
        let i = self.index(cell);
        self.layers[date_idx][i] = v;
    }

    /// Little-endian bytes of every value; input to the golden hash.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.layers.len() * self.layers.first().map_or(0, Vec::len) * 8);
        for layer in &self.layers {
            for v in layer {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

/// FNV-1a, used to derive per-product and per-date seeds.
pub fn mix(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(parts.iter().flat_map(|p| p.iter())) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in [0, 1] with lattice spacing `spacing`.
fn value_noise_octave(rng: &mut ChaCha8Rng, rows: u32, cols: u32, spacing: u32) -> Vec<f64> {
    let s = spacing.max(1);
    let lr = (rows / s + 2) as usize;
    let lc = (cols / s + 2) as usize;
    let lattice: Vec<f64> = (0..lr * lc).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        let (gr, fr) = ((r / s) as usize, smooth((r % s) as f64 / s as f64));
        for c in 0..cols {
            let (gc, fc) = ((c / s) as usize, smooth((c % s) as f64 / s as f64));
            let v00 = lattice[gr * lc + gc];
            let v01 = lattice[gr * lc + gc + 1];
            let v10 = lattice[(gr + 1) * lc + gc];
            let v11 = lattice[(gr + 1) * lc + gc + 1];
            let top = v00 + (v01 - v00) * fc;
            let bot = v10 + (v11 - v10) * fc;
            out.push(top + (bot - top) * fr);
        }
    }
    out
}

/// Two-octave smooth noise in [0, 1]; pure function of its arguments.
pub fn value_noise(seed: u64, rows: u32, cols: u32) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = (rows.max(cols) / 4).max(2);
    let a = value_noise_octave(&mut rng, rows, cols, base);
    let b = value_noise_octave(&mut rng, rows, cols, (base / 2).max(1));
    a.iter().zip(&b).map(|(x, y)| 0.65 * x + 0.35 * y).collect()
}

/// Background field for a product, before motifs are planted.
pub fn generate_background(product: Product, seed: u64, rows: u32, cols: u32) -> Option<Raster> {
    let info = product_info(product)?;
    let base = value_noise(mix(seed, &[product.key().as_bytes(), b"base"]), rows, cols);
    let mut layers = Vec::with_capacity(info.dates.len());
    for (i, date) in info.dates.iter().enumerate() {
        let monthly = value_noise(mix(seed, &[product.key().as_bytes(), &(i as u32).to_le_bytes()]), rows, cols);
        let phase = match date.month {
            Some(m) => (2.0 * std::f64::consts::PI * (m as f64 - 1.0) / 12.0).sin(),
            None => 0.0,
        };
        let layer: Vec<f64> = base
            .iter()
            .zip(&monthly)
            .map(|(b, m)| {
                let n = 0.8 * b + 0.2 * m;
                let v = match product {
                    Product::Ndvi => 0.3 + 0.55 * n + 0.08 * phase,
                    Product::RefB2 => 0.05 + 0.2 * n,
                    Product::Lst => 288.0 + 12.0 * n + 6.0 * phase,
                    Product::Aod550 => 0.05 + 0.3 * n,
                    Product::BuiltS => 150_000.0 * n,
                    Product::Population => 3_000.0 * n,
                    Product::Canopy => 45.0 + 50.0 * n,
                    Product::Treeloss => {
                        if *m > 0.985 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Product::Detection | Product::Lcc => unreachable!(),
                };
                v.clamp(info.min, info.max)
            })
            .collect();
        layers.push(layer);
    }
    Some(Raster { product, rows, cols, dates: info.dates, layers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_in_unit_interval_and_deterministic() {
        let a = value_noise(9, 20, 13);
        assert_eq!(a, value_noise(9, 20, 13));
        assert_ne!(a, value_noise(10, 20, 13));
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn background_covers_dates() {
        let r = generate_background(Product::Ndvi, 1, 8, 8).unwrap();
        assert_eq!(r.layers.len(), 12);
        let r = generate_background(Product::Canopy, 1, 8, 8).unwrap();
        assert_eq!(r.dates, vec![Period::year(2020)]);
        assert!(generate_background(Product::Detection, 1, 8, 8).is_none());
    }
}
