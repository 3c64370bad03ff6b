//! Pure raster operations used by the tool handlers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::raster::Raster;
use crate::types::{Cell, Period};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
}

impl Comparator {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparator::Gt => a > b,
            Comparator::Ge => a >= b,
            Comparator::Lt => a < b,
            Comparator::Le => a <= b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Comparator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_lowercase().as_str() {
            ">" | "gt" | "above" => Comparator::Gt,
            ">=" | "≥" | "ge" | "gte" => Comparator::Ge,
            "<" | "lt" | "below" => Comparator::Lt,
            "<=" | "≤" | "le" | "lte" => Comparator::Le,
            other => return Err(format!("unknown comparator '{other}'")),
        })
    }
}

/// Per-cell mean over the given dates. Dates not covered by the raster are
/// ignored; cells with no covered date are omitted.
pub fn mean_over_dates(raster: &Raster, cells: &BTreeSet<Cell>, dates: &[Period]) -> BTreeMap<Cell, f64> {
    let idx: Vec<usize> = dates.iter().filter_map(|d| raster.date_index(*d)).collect();
    if idx.is_empty() {
        return BTreeMap::new();
    }
    cells
        .iter()
        .filter(|c| raster.in_bounds(**c))
        .map(|c| {
            let s: f64 = idx.iter().map(|i| raster.value(*i, *c)).sum();
            (*c, s / idx.len() as f64)
        })
        .collect()
}

pub fn threshold_cells(means: &BTreeMap<Cell, f64>, cmp: Comparator, value: f64) -> BTreeSet<Cell> {
    means.iter().filter(|(_, v)| cmp.holds(**v, value)).map(|(c, _)| *c).collect()
}

/// 4-connected components of `cells`, each sorted, ordered by size
/// descending and then by the northwest-most cell.
pub fn components(cells: &BTreeSet<Cell>) -> Vec<Vec<Cell>> {
    let mut seen: BTreeSet<Cell> = BTreeSet::new();
    let mut out = Vec::new();
    for &start in cells {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(c) = queue.pop_front() {
            comp.push(c);
            let mut nbrs = vec![Cell::new(c.row + 1, c.col), Cell::new(c.row, c.col + 1)];
            if c.row > 0 {
                nbrs.push(Cell::new(c.row - 1, c.col));
            }
            if c.col > 0 {
                nbrs.push(Cell::new(c.row, c.col - 1));
            }
            for n in nbrs {
                if cells.contains(&n) && seen.insert(n) {
                    queue.push_back(n);
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));
    out
}

pub fn low_clusters(means: &BTreeMap<Cell, f64>, threshold: f64, min_size: usize) -> Vec<Vec<Cell>> {
    let low = threshold_cells(means, Comparator::Lt, threshold);
    components(&low).into_iter().filter(|c| c.len() >= min_size.max(1)).collect()
}

pub fn reforestation(
    canopy: &BTreeMap<Cell, f64>,
    loss: &BTreeMap<Cell, f64>,
    canopy_below: f64,
    require_loss: bool,
) -> BTreeSet<Cell> {
    canopy
        .iter()
        .filter(|(c, v)| **v < canopy_below && (!require_loss || loss.get(c).is_some_and(|l| *l >= 0.5)))
        .map(|(c, _)| *c)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

pub fn stats(values: impl IntoIterator<Item = f64>) -> Option<Stats> {
    let mut count = 0;
    let (mut sum, mut min, mut max) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        count += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    (count > 0).then(|| Stats { count, mean: sum / count as f64, min, max })
}

/// Spatial statistics per date over the selected cells.
pub fn zonal(raster: &Raster, cells: &BTreeSet<Cell>, dates: &[Period]) -> Vec<(Period, Stats)> {
    dates
        .iter()
        .filter_map(|d| {
            let i = raster.date_index(*d)?;
            let s = stats(cells.iter().filter(|c| raster.in_bounds(**c)).map(|c| raster.value(i, *c)))?;
            Some((*d, s))
        })
        .collect()
}
