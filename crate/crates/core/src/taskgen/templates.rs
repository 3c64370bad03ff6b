//! Parametric task templates with gold recipes.

use std::collections::BTreeSet;

use serde_json::{json, Map, Value};

use crate::sandbox::{FixtureMetadata, VISION_DATE};
use crate::sandbox::regions::REGION_NAMES;
use crate::sandbox::vision::ObjectClass;
use crate::types::{DataPointKey, DateRange, Domain, GoldStep, Period, Product};

/// Monthly windows offered to templates over 2024 products.
pub const MONTHLY_RANGES: [&str; 8] = [
    "2024",
    "2024-01..2024-03",
    "2024-04..2024-06",
    "2024-07..2024-09",
    "2024-10..2024-12",
    "2024-01..2024-06",
    "2024-07..2024-12",
    "2024-03",
];

pub const ANNUAL_RANGE: &str = "2020";
pub const STYLES: [&str; 4] = ["viridis", "magma", "reds", "greens"];
pub const MARKER_LABELS: [&str; 4] = ["site A", "site B", "depot", "survey area"];

/// Slot bindings for one instantiation. Unused slots stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Slots {
    pub region: Option<String>,
    pub date_range: Option<String>,
    pub threshold: Option<f64>,
    /// Product key, statistic or object class depending on the template.
    pub metric: Option<String>,
    pub style: Option<String>,
    pub scene: Option<String>,
    pub count: Option<i64>,
    pub label: Option<String>,
}

impl Slots {
    fn region(&self) -> &str {
        self.region.as_deref().unwrap_or("brisbane")
    }

    fn range(&self) -> &str {
        self.date_range.as_deref().unwrap_or("2024")
    }

    fn threshold(&self) -> f64 {
        self.threshold.unwrap_or(0.0)
    }

    fn metric(&self) -> &str {
        self.metric.as_deref().unwrap_or("ndvi")
    }

    fn product(&self) -> Product {
        self.metric().parse().unwrap_or(Product::Ndvi)
    }

    fn style(&self) -> &str {
        self.style.as_deref().unwrap_or("viridis")
    }

    fn scene(&self) -> &str {
        self.scene.as_deref().unwrap_or("")
    }

    fn object_class(&self) -> ObjectClass {
        self.metric().parse().unwrap_or(ObjectClass::Airplane)
    }
}

pub struct TaskTemplate {
    pub code: &'static str,
    pub domain: Domain,
    /// Every valid binding over the fixture.
    pub space: fn(&FixtureMetadata) -> Vec<Slots>,
    pub text: fn(&Slots) -> String,
    pub recipe: fn(&Slots) -> Vec<GoldStep>,
}

impl TaskTemplate {
    pub fn instantiate(&self, slots: &Slots) -> (String, Vec<GoldStep>) {
        ((self.text)(slots), (self.recipe)(slots))
    }
}

impl std::fmt::Debug for TaskTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskTemplate").field("code", &self.code).field("domain", &self.domain).finish()
    }
}

pub fn step(agent: Domain, tool: &str, args: Value) -> GoldStep {
    let canonical_args = match args {
        Value::Object(m) => m.into_iter().collect(),
        _ => Default::default(),
    };
    GoldStep { agent_name: agent, tool_name: tool.to_string(), canonical_args }
}

fn load(product: &str, region: &str, range: &str) -> GoldStep {
    step(Domain::Database, "load_product", json!({"product": product, "region": region, "date_range": range}))
}

fn plot(style: Option<&str>) -> GoldStep {
    let mut m = Map::new();
    m.insert("handle".into(), json!("$handle"));
    if let Some(s) = style {
        m.insert("style".into(), json!(s));
    }
    step(Domain::Map, "map_add_layer", Value::Object(m))
}

fn title(region: &str) -> String {
    let mut c = region.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Human wording for a date range slot.
pub fn when(range: &str) -> String {
    match range.split_once("..") {
        Some((a, b)) => format!("from {a} to {b}"),
        None if range.len() == 4 => format!("for {range}"),
        None => format!("in {range}"),
    }
}

fn monthly_product(p: Product) -> bool {
    matches!(p, Product::Ndvi | Product::RefB2 | Product::Lst | Product::Aod550)
}

fn ranges_for(p: Product) -> Vec<&'static str> {
    if monthly_product(p) {
        MONTHLY_RANGES.to_vec()
    } else {
        vec![ANNUAL_RANGE]
    }
}

fn above_values(p: Product) -> &'static [f64] {
    match p {
        Product::Ndvi => &[0.5, 0.6],
        Product::RefB2 => &[0.3, 0.35],
        Product::Lst => &[295.0, 300.0],
        Product::Aod550 => &[0.4, 0.5],
        Product::BuiltS => &[300_000.0, 400_000.0],
        Product::Population => &[5_000.0, 6_000.0],
        Product::Canopy => &[50.0, 60.0],
        _ => &[0.5],
    }
}

fn below_values(p: Product) -> &'static [f64] {
    match p {
        Product::Ndvi => &[0.2, 0.3],
        Product::RefB2 => &[0.1, 0.15],
        Product::Lst => &[280.0, 285.0],
        Product::Aod550 => &[0.1, 0.2],
        Product::BuiltS => &[10_000.0, 50_000.0],
        Product::Population => &[500.0, 1_000.0],
        Product::Canopy => &[10.0, 20.0],
        _ => &[0.5],
    }
}

fn regions() -> impl Iterator<Item = &'static str> {
    REGION_NAMES.iter().copied()
}

/// region × range × threshold × extra, as a flat product.
fn grid(ranges: &[&str], thresholds: &[f64], extra: &[Option<&str>]) -> Vec<Slots> {
    let mut out = Vec::new();
    for r in regions() {
        for d in ranges {
            for t in thresholds {
                for e in extra {
                    out.push(Slots {
                        region: Some(r.into()),
                        date_range: Some((*d).into()),
                        threshold: Some(*t),
                        style: e.map(str::to_string),
                        ..Slots::default()
                    });
                }
            }
        }
    }
    out
}

fn styles() -> Vec<Option<&'static str>> {
    STYLES.iter().map(|s| Some(*s)).collect()
}

fn scenes(meta: &FixtureMetadata, classes: bool) -> Vec<Slots> {
    let mut out = Vec::new();
    for s in &meta.scenes {
        if classes {
            for c in ObjectClass::ALL {
                out.push(Slots { scene: Some(s.id.clone()), metric: Some(c.key().into()), region: Some(s.region.to_string()), ..Slots::default() });
            }
        } else {
            out.push(Slots { scene: Some(s.id.clone()), region: Some(s.region.to_string()), ..Slots::default() });
        }
    }
    out
}

fn per_product(products: &[Product], f: impl Fn(Product) -> Vec<Slots>) -> Vec<Slots> {
    products
        .iter()
        .flat_map(|p| {
            f(*p).into_iter().map(move |mut s| {
                s.metric = Some(p.key().into());
                s
            })
        })
        .collect()
}

const MONTHLY: [Product; 4] = [Product::Ndvi, Product::RefB2, Product::Lst, Product::Aod550];

pub fn builtin_templates() -> Vec<TaskTemplate> {
    use Domain::*;
    vec![
        TaskTemplate {
            code: "crop_rotation",
            domain: Agriculture,
            space: |_| {
                let mut out = Vec::new();
                for mut s in grid(&MONTHLY_RANGES, &[0.2, 0.25, 0.3], &[None]) {
                    for n in [2, 3] {
                        s.count = Some(n);
                        out.push(s.clone());
                    }
                }
                out
            },
            text: |s| {
                format!(
                    "From NDVI, recommend crop rotation areas in {} {}, using clusters of at least {} cells below {}, and plot them on the map",
                    title(s.region()),
                    when(s.range()),
                    s.count.unwrap_or(2),
                    s.threshold()
                )
            },
            recipe: |s| {
                vec![
                    load("ndvi", s.region(), s.range()),
                    step(DataOps, "filter_region", json!({"handle": "$handle", "region": s.region()})),
                    step(
                        Agriculture,
                        "low_ndvi_clusters",
                        json!({"handle": "$handle", "threshold": s.threshold(), "min_cluster_size": s.count.unwrap_or(2)}),
                    ),
                    plot(None),
                ]
            },
        },
        TaskTemplate {
            code: "bright_fields",
            domain: Agriculture,
            space: |_| grid(&MONTHLY_RANGES, &[0.35, 0.4, 0.45], &[None]),
            text: |s| {
                format!(
                    "Find fields in {} with Band 2 reflectance above {} {} and show them on the map",
                    title(s.region()),
                    s.threshold(),
                    when(s.range())
                )
            },
            recipe: |s| {
                vec![
                    load("ref_b2", s.region(), s.range()),
                    step(Agriculture, "high_reflectance_zones", json!({"handle": "$handle", "threshold": s.threshold()})),
                    plot(None),
                ]
            },
        },
        TaskTemplate {
            code: "heatwave",
            domain: Climate,
            space: |_| grid(&MONTHLY_RANGES, &[300.0, 305.0, 310.0], &[None]),
            text: |s| {
                format!(
                    "Identify dangerous heatwave zones in {} where LST exceeds {} K {} and plot them",
                    title(s.region()),
                    s.threshold(),
                    when(s.range())
                )
            },
            recipe: |s| {
                vec![
                    load("lst", s.region(), s.range()),
                    step(Climate, "heatwave_zones", json!({"handle": "$handle", "threshold": s.threshold()})),
                    plot(None),
                ]
            },
        },
        TaskTemplate {
            code: "haze",
            domain: Climate,
            space: |_| {
                let mut out = Vec::new();
                for mut s in grid(&MONTHLY_RANGES, &[0.6, 0.8, 1.0], &[None]) {
                    for stat in ["mean", "max"] {
                        s.metric = Some(stat.into());
                        out.push(s.clone());
                    }
                }
                out
            },
            text: |s| {
                format!(
                    "Report the {} aerosol optical depth over {} {} and list cells where AOD550 exceeds {}",
                    s.metric(),
                    title(s.region()),
                    when(s.range()),
                    s.threshold()
                )
            },
            recipe: |s| {
                vec![
                    load("aod550", s.region(), s.range()),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle", "stat": s.metric()})),
                    step(Climate, "haze_zones", json!({"handle": "$handle", "threshold": s.threshold()})),
                ]
            },
        },
        TaskTemplate {
            code: "overpopulation",
            domain: Urban,
            space: |_| grid(&[ANNUAL_RANGE], &[8_000.0, 10_000.0, 12_000.0, 14_000.0, 16_000.0], &styles()),
            text: |s| {
                format!(
                    "Find overpopulation hotspots in {} above {} people per cell and plot them in {} with a marker",
                    title(s.region()),
                    s.threshold(),
                    s.style()
                )
            },
            recipe: |s| {
                vec![
                    load("population", s.region(), ANNUAL_RANGE),
                    step(Urban, "overpopulation_hotspots", json!({"handle": "$handle", "threshold": s.threshold()})),
                    plot(Some(s.style())),
                    step(Map, "map_add_marker", json!({"region": s.region()})),
                ]
            },
        },
        TaskTemplate {
            code: "dense_builtup",
            domain: Urban,
            space: |_| grid(&[ANNUAL_RANGE], &[500_000.0, 600_000.0, 700_000.0, 750_000.0, 800_000.0], &styles()),
            text: |s| {
                format!(
                    "Plot dense built-up zones in {} where built surface exceeds {} m2, styled {}",
                    title(s.region()),
                    s.threshold(),
                    s.style()
                )
            },
            recipe: |s| {
                vec![
                    load("built_s", s.region(), ANNUAL_RANGE),
                    step(Urban, "dense_builtup_zones", json!({"handle": "$handle", "threshold": s.threshold()})),
                    plot(Some(s.style())),
                ]
            },
        },
        TaskTemplate {
            code: "reforestation",
            domain: Forestry,
            space: |_| grid(&[ANNUAL_RANGE], &[15.0, 20.0, 25.0, 30.0], &styles()),
            text: |s| {
                format!(
                    "Recommend reforestation sites in {} where canopy cover is below {} percent and tree loss occurred, and plot them in {}",
                    title(s.region()),
                    s.threshold(),
                    s.style()
                )
            },
            recipe: |s| {
                vec![
                    load("canopy", s.region(), ANNUAL_RANGE),
                    load("treeloss", s.region(), ANNUAL_RANGE),
                    step(
                        Forestry,
                        "reforestation_candidates",
                        json!({"canopy_handle": "$handle~1", "loss_handle": "$handle", "canopy_below": s.threshold(), "require_loss": true}),
                    ),
                    plot(Some(s.style())),
                ]
            },
        },
        TaskTemplate {
            code: "low_canopy",
            domain: Forestry,
            space: |_| grid(&[ANNUAL_RANGE], &[10.0, 15.0, 20.0, 25.0, 30.0], &styles()),
            text: |s| {
                format!(
                    "Which parts of {} have canopy cover below {} percent? Plot them in {}",
                    title(s.region()),
                    s.threshold(),
                    s.style()
                )
            },
            recipe: |s| {
                vec![
                    load("canopy", s.region(), ANNUAL_RANGE),
                    step(Forestry, "low_canopy_zones", json!({"handle": "$handle", "threshold": s.threshold()})),
                    plot(Some(s.style())),
                ]
            },
        },
        TaskTemplate {
            code: "detect_plot",
            domain: Vision,
            space: |m| scenes(m, true),
            text: |s| format!("Detect {} in scene {} and plot the detections", s.object_class().plural(), s.scene()),
            recipe: |s| {
                vec![
                    step(Vision, "detect_objects", json!({"scene": s.scene(), "object_class": s.object_class().key()})),
                    plot(None),
                ]
            },
        },
        TaskTemplate {
            code: "classify",
            domain: Vision,
            space: |m| scenes(m, false),
            text: |s| format!("Classify the land cover of scene {}", s.scene()),
            recipe: |s| vec![step(Vision, "classify_landcover", json!({"scene": s.scene()}))],
        },
        TaskTemplate {
            code: "count_objects",
            domain: Vision,
            space: |m| scenes(m, true),
            text: |s| format!("How many {} are visible in scene {}?", s.object_class().plural(), s.scene()),
            recipe: |s| {
                vec![step(Vision, "detect_objects", json!({"scene": s.scene(), "object_class": s.object_class().key()}))]
            },
        },
        TaskTemplate {
            code: "load_mean",
            domain: Database,
            space: |_| per_product(&Product::RASTER, |p| grid(&ranges_for(p), &[0.0], &[None])),
            text: |s| {
                format!("Load {} for {} {} and report its mean value", s.product().label(), title(s.region()), when(s.range()))
            },
            recipe: |s| {
                vec![
                    load(s.metric(), s.region(), s.range()),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle", "stat": "mean"})),
                ]
            },
        },
        TaskTemplate {
            code: "load_pair",
            domain: Database,
            space: |_| grid(&MONTHLY_RANGES, &[0.0], &[None]),
            text: |s| format!("Load NDVI and LST for {} {} and compare their monthly means", title(s.region()), when(s.range())),
            recipe: |s| {
                vec![
                    load("ndvi", s.region(), s.range()),
                    load("lst", s.region(), s.range()),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle~1", "stat": "mean"})),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle", "stat": "mean"})),
                ]
            },
        },
        TaskTemplate {
            code: "date_window",
            domain: DataOps,
            space: |_| per_product(&MONTHLY, |_| grid(&MONTHLY_RANGES[1..], &[0.0], &[None])),
            text: |s| {
                format!(
                    "Starting from the full 2024 {} record for {}, keep only the months {} and report the mean",
                    s.product().label(),
                    title(s.region()),
                    when(s.range())
                )
            },
            recipe: |s| {
                vec![
                    load(s.metric(), s.region(), "2024"),
                    step(DataOps, "filter_dates", json!({"handle": "$handle", "date_range": s.range()})),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle", "stat": "mean"})),
                ]
            },
        },
        TaskTemplate {
            code: "threshold_above",
            domain: DataOps,
            space: |_| per_product(&Product::RASTER, |p| grid(&ranges_for(p), above_values(p), &[None])),
            text: |s| {
                format!(
                    "Which cells in {} have mean {} above {} {}?",
                    title(s.region()),
                    s.product().label(),
                    s.threshold(),
                    when(s.range())
                )
            },
            recipe: |s| {
                vec![
                    load(s.metric(), s.region(), s.range()),
                    step(DataOps, "threshold_zones", json!({"handle": "$handle", "comparator": ">", "value": s.threshold()})),
                ]
            },
        },
        TaskTemplate {
            code: "clip_max",
            domain: DataOps,
            space: |_| per_product(&Product::RASTER, |p| grid(&ranges_for(p), &[0.0], &[None])),
            text: |s| format!("Clip {} to {} {} and report the maximum", s.product().label(), title(s.region()), when(s.range())),
            recipe: |s| {
                vec![
                    load(s.metric(), s.region(), s.range()),
                    step(DataOps, "filter_region", json!({"handle": "$handle", "region": s.region()})),
                    step(DataOps, "zonal_stats", json!({"handle": "$handle", "stat": "max"})),
                ]
            },
        },
        TaskTemplate {
            code: "low_plot",
            domain: DataOps,
            space: |_| per_product(&Product::RASTER, |p| grid(&ranges_for(p), below_values(p), &[None])),
            text: |s| {
                format!(
                    "Highlight cells in {} where mean {} is below {} {} and plot them",
                    title(s.region()),
                    s.product().label(),
                    s.threshold(),
                    when(s.range())
                )
            },
            recipe: |s| {
                vec![
                    load(s.metric(), s.region(), s.range()),
                    step(DataOps, "threshold_zones", json!({"handle": "$handle", "comparator": "<", "value": s.threshold()})),
                    plot(None),
                ]
            },
        },
        TaskTemplate {
            code: "plot_product",
            domain: Map,
            space: |_| per_product(&Product::RASTER, |p| grid(&ranges_for(p), &[0.0], &styles())),
            text: |s| {
                format!("Plot {} for {} {} on the map in {}", s.product().label(), title(s.region()), when(s.range()), s.style())
            },
            recipe: |s| vec![load(s.metric(), s.region(), s.range()), plot(Some(s.style()))],
        },
        TaskTemplate {
            code: "marker",
            domain: Map,
            space: |_| {
                let mut out = Vec::new();
                for r in regions() {
                    for l in MARKER_LABELS {
                        out.push(Slots { region: Some(r.into()), label: Some(l.into()), ..Slots::default() });
                    }
                }
                out
            },
            text: |s| {
                format!(
                    "Put a marker labelled {} on {} on the map and list the map layers",
                    s.label.as_deref().unwrap_or("site"),
                    title(s.region())
                )
            },
            recipe: |s| {
                vec![
                    step(Map, "map_add_marker", json!({"region": s.region(), "label": s.label.as_deref().unwrap_or("site")})),
                    step(Map, "map_snapshot", json!({})),
                ]
            },
        },
    ]
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecipeError {
    #[error("unknown region '{0}'")]
    UnknownRegion(String),
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("bad argument in {tool}: {detail}")]
    BadArgument { tool: String, detail: String },
}

/// Covered dates of `product` selected by `range`, read from metadata.
/// A year range over monthly coverage keeps every month of those years.
pub fn select_dates(meta: &FixtureMetadata, product: Product, range: Option<&DateRange>) -> Vec<Period> {
    let cov = meta.dates(product);
    let Some(r) = range else {
        return cov;
    };
    cov.into_iter()
        .filter(|p| match (r.start.month, p.month) {
            (None, Some(_)) => r.start.year <= p.year && p.year <= r.end.year,
            _ => r.contains(*p),
        })
        .collect()
}

/// Gold datapoint set: region cells × selected dates for every load, plus
/// the scene cell for every vision call. Reads metadata only.
pub fn gold_datapoints(steps: &[GoldStep], meta: &FixtureMetadata) -> Result<BTreeSet<DataPointKey>, RecipeError> {
    let mut out = BTreeSet::new();
    for s in steps {
        let arg = |k: &str| s.canonical_args.get(k).and_then(Value::as_str);
        let bad = |detail: &str| RecipeError::BadArgument { tool: s.tool_name.clone(), detail: detail.into() };
        match s.tool_name.as_str() {
            "load_product" => {
                let product: Product = arg("product").ok_or_else(|| bad("product"))?.parse().map_err(|_| bad("product"))?;
                let region = arg("region").ok_or_else(|| bad("region"))?.to_lowercase();
                let cells = meta
                    .regions
                    .iter()
                    .find(|(k, _)| k.as_str() == region)
                    .map(|(_, v)| v)
                    .ok_or_else(|| RecipeError::UnknownRegion(region.clone()))?;
                let range = match s.canonical_args.get("date_range") {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(DateRange::from_json(v).map_err(|_| bad("date_range"))?),
                };
                for d in select_dates(meta, product, range.as_ref()) {
                    out.extend(cells.iter().map(|c| DataPointKey::new(product, *c, d)));
                }
            }
            "detect_objects" | "classify_landcover" => {
                let id = arg("scene").ok_or_else(|| bad("scene"))?;
                let scene = meta.scene(id).ok_or_else(|| RecipeError::UnknownScene(id.into()))?;
                let product = if s.tool_name == "detect_objects" { Product::Detection } else { Product::Lcc };
                out.insert(DataPointKey::new(product, scene.cell, VISION_DATE));
            }
            _ => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::{Sandbox, SandboxConfig};

    #[test]
    fn every_domain_has_templates_with_distinct_codes() {
        let ts = builtin_templates();
        for d in Domain::ALL {
            assert!(ts.iter().any(|t| t.domain == d), "{d}");
        }
        let codes: BTreeSet<&str> = ts.iter().map(|t| t.code).collect();
        assert_eq!(codes.len(), ts.len());
    }

    #[test]
    fn plot_wording_tracks_map_steps() {
        let meta = Sandbox::new(SandboxConfig::default()).metadata();
        for t in builtin_templates() {
            let slots = (t.space)(&meta);
            let (text, steps) = t.instantiate(&slots[0]);
            let has_map = steps.iter().any(|s| s.agent_name == Domain::Map);
            assert_eq!(has_map, crate::orchestrator::wants_plot(&text), "{}: {text}", t.code);
        }
    }

    #[test]
    fn brisbane_ndvi_year_is_cells_times_twelve() {
        let meta = Sandbox::new(SandboxConfig::default()).metadata();
        let steps = vec![load("ndvi", "brisbane", "2024")];
        let g = gold_datapoints(&steps, &meta).unwrap();
        assert_eq!(g.len(), 192 * 12);
        let q = gold_datapoints(&[load("ndvi", "brisbane", "2024-01..2024-03")], &meta).unwrap();
        assert_eq!(q.len(), 192 * 3);
        assert!(matches!(gold_datapoints(&[load("ndvi", "atlantis", "2024")], &meta), Err(RecipeError::UnknownRegion(_))));
    }

    #[test]
    fn when_wording() {
        assert_eq!(when("2024"), "for 2024");
        assert_eq!(when("2024-03"), "in 2024-03");
        assert_eq!(when("2024-01..2024-03"), "from 2024-01 to 2024-03");
    }
}
