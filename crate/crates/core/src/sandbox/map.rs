//! Map state shown to the user.

use serde::{Deserialize, Serialize};

use crate::types::{Cell, Product, RegionRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLayer {
    pub product: Product,
    pub region: Option<RegionRef>,
    pub date: String,
    pub style: String,
    pub handle: String,
    pub cells: Vec<Cell>,
    /// Mean value per cell, parallel to `cells`; empty for derived cell sets.
    #[serde(default)]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationKind {
    Marker,
    Highlight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub kind: AnnotationKind,
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapState {
    pub layers: Vec<MapLayer>,
    pub annotations: Vec<Annotation>,
}

impl MapState {
    pub fn add_layer(&mut self, layer: MapLayer) -> usize {
        self.layers.push(layer);
        self.layers.len()
    }

    pub fn annotate(&mut self, a: Annotation) {
        self.annotations.push(a);
    }

    pub fn highlighted(&self) -> impl Iterator<Item = &Annotation> {
        self.annotations.iter().filter(|a| a.kind == AnnotationKind::Highlight)
    }

    /// One line per layer: `product region date style (n cells)`.
    pub fn summary(&self) -> Vec<String> {
        self.layers
            .iter()
            .map(|l| {
                let region = l.region.as_ref().map_or("-", |r| r.as_str());
                format!("{} {} {} {} ({} cells)", l.product, region, l.date, l.style, l.cells.len())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(p: Product) -> MapLayer {
        MapLayer {
            product: p,
            region: Some(RegionRef::new("ipswich")),
            date: "2020".into(),
            style: "default".into(),
            handle: "@h1".into(),
            cells: vec![Cell::new(1, 1)],
            values: vec![],
        }
    }

    #[test]
    fn layers_keep_insertion_order() {
        let mut m = MapState::default();
        m.add_layer(layer(Product::Canopy));
        assert_eq!(m.layers.len(), 1);
        m.add_layer(layer(Product::Treeloss));
        assert_eq!(m.layers[0].product, Product::Canopy);
        assert_eq!(m.layers[1].product, Product::Treeloss);
        let snap = m.clone();
        assert_eq!(snap, m);
    }

    #[test]
    fn json_shape() {
        let mut m = MapState::default();
        m.add_layer(layer(Product::Canopy));
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["layers"][0]["product"], "canopy");
        assert_eq!(v["layers"][0]["region"], "ipswich");
        assert_eq!(v["layers"][0]["date"], "2020");
        assert_eq!(v["layers"][0]["style"], "default");
        assert!(v["annotations"].as_array().unwrap().is_empty());
    }
}
