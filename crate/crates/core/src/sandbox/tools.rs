//! The real (non-filler) tools and their handlers.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};

use super::ops::{self, Comparator};
use super::session::{ErrorCode, HandleData, SandboxSession, ToolError, ToolOutput};
use super::vision::{self, ObjectClass};
use super::map::{Annotation, AnnotationKind, MapLayer};
use super::VISION_DATE;
use crate::types::{Cell, DataPointKey, DateRange, Domain, ParamKind, ParamSpec, Period, Product, RegionRef, ToolSpec};

pub type Args = Map<String, Value>;
pub type HandlerFn = fn(&mut SandboxSession, &Args) -> Result<ToolOutput, ToolError>;

const LIST_CLUSTERS: usize = 3;
const LIST_CELLS: usize = 12;

fn spec(agent: Domain, name: &str, description: &str, params: Vec<ParamSpec>) -> ToolSpec {
    ToolSpec { name: name.into(), agent, description: description.into(), params, schema_token_cost: 0 }
}

fn req(n: &str, k: ParamKind) -> ParamSpec {
    ParamSpec::required(n, k)
}

fn opt(n: &str, k: ParamKind) -> ParamSpec {
    ParamSpec::optional(n, k)
}

/// Specs (with zero schema cost; the registry computes it) and handlers.
pub fn real_tools() -> Vec<(ToolSpec, HandlerFn)> {
    use Domain::*;
    use ParamKind as K;
    vec![
        (
            spec(Database, "load_product", "load a raster product for a region and date range", vec![
                req("product", K::Product),
                req("region", K::Region),
                opt("date_range", K::DateRange),
            ]),
            load_product as HandlerFn,
        ),
        (
            spec(DataOps, "filter_region", "clip loaded data to a region", vec![req("handle", K::Handle), req("region", K::Region)]),
            filter_region,
        ),
        (
            spec(DataOps, "filter_dates", "restrict loaded data to a date range", vec![
                req("handle", K::Handle),
                req("date_range", K::DateRange),
            ]),
            filter_dates,
        ),
        (
            spec(DataOps, "zonal_stats", "summary statistics of loaded data per date", vec![
                req("handle", K::Handle),
                opt("stat", K::Text),
            ]),
            zonal_stats,
        ),
        (
            spec(DataOps, "threshold_zones", "cells whose mean value passes a comparison", vec![
                req("handle", K::Handle),
                req("comparator", K::Comparator),
                req("value", K::Number),
            ]),
            threshold_zones,
        ),
        (
            spec(Agriculture, "low_ndvi_clusters", "connected clusters of low NDVI for crop rotation", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
                req("min_cluster_size", K::Integer),
            ]),
            low_ndvi_clusters,
        ),
        (
            spec(Agriculture, "high_reflectance_zones", "cells with high Band 2 reflectance", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            high_reflectance_zones,
        ),
        (
            spec(Climate, "heatwave_zones", "dangerous heatwave cells from land surface temperature", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            heatwave_zones,
        ),
        (
            spec(Climate, "haze_zones", "cells with heavy aerosol optical depth", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            haze_zones,
        ),
        (
            spec(Urban, "overpopulation_hotspots", "population hotspots above a density", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            overpopulation_hotspots,
        ),
        (
            spec(Urban, "dense_builtup_zones", "cells with dense built-up surface", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            dense_builtup_zones,
        ),
        (
            spec(Forestry, "reforestation_candidates", "low canopy cells with tree loss to reforest", vec![
                req("canopy_handle", K::Handle),
                req("loss_handle", K::Handle),
                req("canopy_below", K::Number),
                req("require_loss", K::Boolean),
            ]),
            reforestation_candidates,
        ),
        (
            spec(Forestry, "low_canopy_zones", "cells with canopy cover below a percentage", vec![
                req("handle", K::Handle),
                req("threshold", K::Number),
            ]),
            low_canopy_zones,
        ),
        (
            spec(Vision, "detect_objects", "detect objects of a class in a scene", vec![
                req("scene", K::Scene),
                req("object_class", K::ObjectClass),
            ]),
            detect_objects,
        ),
        (
            spec(Vision, "classify_landcover", "land cover class of a scene", vec![req("scene", K::Scene)]),
            classify_landcover,
        ),
        (
            spec(Map, "map_add_layer", "plot a dataset or result on the map", vec![req("handle", K::Handle), opt("style", K::Style)]),
            map_add_layer,
        ),
        (
            spec(Map, "map_add_marker", "place a labelled marker on a region", vec![req("region", K::Region), opt("label", K::Text)]),
            map_add_marker,
        ),
        (spec(Map, "map_snapshot", "list the current map layers", vec![]), map_snapshot),
    ]
}

fn invalid(msg: impl Into<String>) -> ToolError {
    ToolError::new(ErrorCode::InvalidArgs, msg)
}

fn arg_str<'a>(args: &'a Args, key: &str) -> Result<&'a str, ToolError> {
    match args.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(other) => Err(invalid(format!("'{key}' must be a string, got {other}"))),
        None => Err(invalid(format!("missing argument '{key}'"))),
    }
}

fn arg_num(args: &Args, key: &str) -> Result<f64, ToolError> {
    match args.get(key) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| invalid(format!("'{key}' is not a number"))),
        Some(Value::String(s)) => s.trim().parse().map_err(|_| invalid(format!("'{key}' is not a number: {s}"))),
        Some(other) => Err(invalid(format!("'{key}' must be a number, got {other}"))),
        None => Err(invalid(format!("missing argument '{key}'"))),
    }
}

fn arg_bool(args: &Args, key: &str) -> Result<bool, ToolError> {
    match args.get(key) {
        Some(Value::Bool(b)) => Ok(*b),
        Some(Value::String(s)) => match s.trim().to_lowercase().as_str() {
            "true" | "yes" => Ok(true),
            "false" | "no" => Ok(false),
            _ => Err(invalid(format!("'{key}' must be a boolean"))),
        },
        Some(other) => Err(invalid(format!("'{key}' must be a boolean, got {other}"))),
        None => Err(invalid(format!("missing argument '{key}'"))),
    }
}

fn arg_region(s: &SandboxSession, args: &Args, key: &str) -> Result<(RegionRef, BTreeSet<Cell>), ToolError> {
    let name = arg_str(args, key)?;
    let cells = s
        .sandbox()
        .region(name)
        .ok_or_else(|| ToolError::new(ErrorCode::UnknownRegion, format!("unknown region '{name}'")))?;
    Ok((RegionRef::new(name), cells.clone()))
}

fn arg_range(args: &Args, key: &str) -> Result<Option<DateRange>, ToolError> {
    match args.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => DateRange::from_json(v).map(Some).map_err(|e| invalid(e.to_string())),
    }
}

/// Resolves a handle argument. Absent or unknown handles mean the data was
/// never loaded.
fn arg_handle(s: &SandboxSession, args: &Args, key: &str, expect: Option<Product>) -> Result<HandleData, ToolError> {
    let missing = |detail: String| {
        let what = expect.map_or("data".to_string(), |p| p.label().to_string());
        ToolError::new(ErrorCode::MissingProduct, format!("{what} not loaded ({detail})"))
    };
    let id = match args.get(key) {
        Some(Value::String(id)) => id.as_str(),
        Some(other) => return Err(invalid(format!("'{key}' must be a handle string, got {other}"))),
        None => return Err(missing(format!("no '{key}' given"))),
    };
    let data = s.get(id).cloned().ok_or_else(|| missing(format!("unknown handle '{id}'")))?;
    if let Some(p) = expect {
        if data.product() != p {
            return Err(ToolError::new(
                ErrorCode::WrongProduct,
                format!("'{key}' holds {}, expected {}", data.product().label(), p.label()),
            ));
        }
    }
    Ok(data)
}

fn raster_parts(h: &HandleData, key: &str) -> Result<(Product, Vec<Period>, BTreeSet<Cell>), ToolError> {
    match h {
        HandleData::Raster { product, dates, cells, .. } => Ok((*product, dates.clone(), cells.clone())),
        _ => Err(ToolError::new(ErrorCode::WrongProduct, format!("'{key}' is a derived result, not raster data"))),
    }
}

fn cell_sample(cells: impl IntoIterator<Item = Cell>) -> Value {
    json!(cells.into_iter().take(LIST_CELLS).map(|c| [c.row, c.col]).collect::<Vec<_>>())
}

fn means(s: &SandboxSession, product: Product, cells: &BTreeSet<Cell>, dates: &[Period]) -> BTreeMap<Cell, f64> {
    let r = s.sandbox().raster(product).expect("raster product");
    ops::mean_over_dates(r, cells, dates)
}

fn selection(product: Product, cells: &BTreeSet<Cell>, dates: &[Period]) -> BTreeSet<DataPointKey> {
    cells.iter().flat_map(|c| dates.iter().map(move |d| DataPointKey::new(product, *c, *d))).collect()
}

fn load_product(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let name = arg_str(args, "product")?;
    let product: Product = name
        .parse()
        .map_err(|_| ToolError::new(ErrorCode::MissingProduct, format!("product '{name}' is not in the catalogue")))?;
    if !product.is_raster() {
        return Err(ToolError::new(ErrorCode::MissingProduct, format!("{} is not a raster product", product.label())));
    }
    let (region, cells) = arg_region(s, args, "region")?;
    let dates = match arg_range(args, "date_range")? {
        None => s.sandbox().coverage(product),
        Some(r) => s.sandbox().dates_in(product, &r).ok_or_else(|| {
            ToolError::new(ErrorCode::DateOutOfRange, format!("{} has no data for {}", product.label(), r.canonical()))
        })?,
    };
    let accessed = selection(product, &cells, &dates);
    let n = cells.len();
    let range = DateRange::new(dates[0], *dates.last().expect("nonempty"));
    let id = s.put(HandleData::Raster { product, region: Some(region.clone()), dates: dates.clone(), cells });
    Ok(ToolOutput {
        payload: json!({
            "handle": id, "product": product.key(), "region": region.as_str(),
            "dates": range.canonical(), "cells": n, "datapoints": accessed.len(),
        }),
        accessed,
    })
}

fn filter_region(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", None)?;
    let (product, dates, cells) = raster_parts(&h, "handle")?;
    let (region, mask) = arg_region(s, args, "region")?;
    let kept: BTreeSet<Cell> = cells.intersection(&mask).copied().collect();
    let n = kept.len();
    let id = s.put(HandleData::Raster { product, region: Some(region.clone()), dates, cells: kept });
    Ok(ToolOutput::new(json!({"handle": id, "product": product.key(), "region": region.as_str(), "cells": n})))
}

fn filter_dates(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", None)?;
    let (product, dates, cells) = raster_parts(&h, "handle")?;
    let range = arg_range(args, "date_range")?.ok_or_else(|| invalid("missing argument 'date_range'"))?;
    let wanted = s.sandbox().dates_in(product, &range).ok_or_else(|| {
        ToolError::new(ErrorCode::DateOutOfRange, format!("{} has no data for {}", product.label(), range.canonical()))
    })?;
    let kept: Vec<Period> = dates.into_iter().filter(|d| wanted.contains(d)).collect();
    let n = kept.len();
    let id = s.put(HandleData::Raster { product, region: h.region().cloned(), dates: kept, cells });
    Ok(ToolOutput::new(json!({"handle": id, "product": product.key(), "dates": n})))
}

fn zonal_stats(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", None)?;
    let (product, dates, cells) = raster_parts(&h, "handle")?;
    let stat = match args.get("stat") {
        None | Some(Value::Null) => "mean".to_string(),
        Some(_) => arg_str(args, "stat")?.to_lowercase(),
    };
    if !matches!(stat.as_str(), "mean" | "min" | "max") {
        return Err(invalid(format!("stat must be mean, min or max, got '{stat}'")));
    }
    let r = s.sandbox().raster(product).expect("raster product");
    let rows: Vec<Value> = ops::zonal(r, &cells, &dates)
        .into_iter()
        .map(|(d, st)| {
            let v = match stat.as_str() {
                "min" => st.min,
                "max" => st.max,
                _ => st.mean,
            };
            json!([d.to_string(), (v * 1e4).round() / 1e4])
        })
        .collect();
    Ok(ToolOutput {
        payload: json!({"product": product.key(), "stat": stat, "values": rows}),
        accessed: selection(product, &cells, &dates),
    })
}

fn zones(
    s: &mut SandboxSession,
    args: &Args,
    product: Option<Product>,
    cmp: Comparator,
    value: f64,
    label: &str,
) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", product)?;
    let (product, dates, cells) = raster_parts(&h, "handle")?;
    let m = means(s, product, &cells, &dates);
    let hits = ops::threshold_cells(&m, cmp, value);
    let n = hits.len();
    let sample = cell_sample(hits.iter().copied());
    let id = s.put(HandleData::Cells {
        product,
        region: h.region().cloned(),
        dates: dates.clone(),
        cells: hits,
        label: format!("{label} ({} {cmp} {value})", product.key()),
    });
    Ok(ToolOutput {
        payload: json!({"handle": id, "product": product.key(), "cells": n, "sample": sample}),
        accessed: selection(product, &cells, &dates),
    })
}

fn threshold_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let cmp: Comparator = arg_str(args, "comparator")?.parse().map_err(invalid)?;
    let v = arg_num(args, "value")?;
    zones(s, args, None, cmp, v, "threshold zones")
}

fn high_reflectance_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::RefB2), Comparator::Gt, t, "high reflectance")
}

fn heatwave_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::Lst), Comparator::Gt, t, "heatwave")
}

fn haze_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::Aod550), Comparator::Gt, t, "haze")
}

fn overpopulation_hotspots(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::Population), Comparator::Gt, t, "overpopulation")
}

fn dense_builtup_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::BuiltS), Comparator::Gt, t, "dense built-up")
}

fn low_canopy_zones(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let t = arg_num(args, "threshold")?;
    zones(s, args, Some(Product::Canopy), Comparator::Lt, t, "low canopy")
}

fn low_ndvi_clusters(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", Some(Product::Ndvi))?;
    let (product, dates, cells) = raster_parts(&h, "handle")?;
    let t = arg_num(args, "threshold")?;
    let min = arg_num(args, "min_cluster_size")?;
    if min < 1.0 || min.fract() != 0.0 {
        return Err(invalid("min_cluster_size must be a positive integer"));
    }
    let m = means(s, product, &cells, &dates);
    let clusters = ops::low_clusters(&m, t, min as usize);
    let listed: Vec<Value> = clusters.iter().take(LIST_CLUSTERS).map(|c| cell_sample(c.iter().copied())).collect();
    let all: BTreeSet<Cell> = clusters.iter().flatten().copied().collect();
    let n = clusters.len();
    let id = s.put(HandleData::Cells {
        product,
        region: h.region().cloned(),
        dates: dates.clone(),
        cells: all,
        label: format!("low NDVI clusters (< {t})"),
    });
    Ok(ToolOutput {
        payload: json!({"handle": id, "product": product.key(), "clusters": n, "largest": listed}),
        accessed: selection(product, &cells, &dates),
    })
}

fn reforestation_candidates(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let ch = arg_handle(s, args, "canopy_handle", Some(Product::Canopy))?;
    let lh = arg_handle(s, args, "loss_handle", Some(Product::Treeloss))?;
    let (cp, cd, cc) = raster_parts(&ch, "canopy_handle")?;
    let (lp, ld, lc) = raster_parts(&lh, "loss_handle")?;
    let below = arg_num(args, "canopy_below")?;
    let require = arg_bool(args, "require_loss")?;
    let cm = means(s, cp, &cc, &cd);
    let lm = means(s, lp, &lc, &ld);
    let hits = ops::reforestation(&cm, &lm, below, require);
    let mut accessed = selection(cp, &cc, &cd);
    if require {
        accessed.extend(selection(lp, &lc, &ld));
    }
    let n = hits.len();
    let sample = cell_sample(hits.iter().copied());
    let id = s.put(HandleData::Cells {
        product: cp,
        region: ch.region().cloned(),
        dates: cd,
        cells: hits,
        label: format!("reforestation candidates (canopy < {below})"),
    });
    Ok(ToolOutput { payload: json!({"handle": id, "cells": n, "sample": sample}), accessed })
}

fn scene_arg<'a>(s: &'a SandboxSession, args: &Args) -> Result<&'a vision::Scene, ToolError> {
    let id = arg_str(args, "scene")?;
    s.sandbox().scene(id).ok_or_else(|| ToolError::new(ErrorCode::UnknownScene, format!("unknown scene '{id}'")))
}

fn detect_objects(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let class: ObjectClass = arg_str(args, "object_class")?.parse().map_err(invalid)?;
    let scene = scene_arg(s, args)?.clone();
    let boxes = vision::detect(&scene, class, &s.sandbox().config().vision);
    let listed: Vec<[u32; 4]> = boxes.iter().map(|b| [b.x0, b.y0, b.x1, b.y1]).collect();
    let n = boxes.len();
    let id = s.put(HandleData::Detections {
        scene: scene.id.clone(),
        region: scene.region.clone(),
        cell: scene.cell,
        class,
        boxes,
    });
    Ok(ToolOutput {
        payload: json!({"handle": id, "scene": scene.id, "class": class.key(), "count": n, "boxes": listed}),
        accessed: [DataPointKey::new(Product::Detection, scene.cell, VISION_DATE)].into(),
    })
}

fn classify_landcover(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let scene = scene_arg(s, args)?;
    let label = vision::classify(scene, &s.sandbox().config().vision);
    Ok(ToolOutput {
        payload: json!({"scene": scene.id, "landcover": label.key()}),
        accessed: [DataPointKey::new(Product::Lcc, scene.cell, VISION_DATE)].into(),
    })
}

fn date_label(dates: &[Period]) -> String {
    match (dates.first(), dates.last()) {
        (Some(a), Some(b)) if a == b => a.to_string(),
        (Some(a), Some(b)) => format!("{a}..{b}"),
        _ => String::new(),
    }
}

fn map_add_layer(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let h = arg_handle(s, args, "handle", None)?;
    let style = match args.get("style") {
        None | Some(Value::Null) => "default".to_string(),
        Some(_) => arg_str(args, "style")?.to_string(),
    };
    let handle = arg_str(args, "handle")?.trim().to_string();
    let mut accessed = BTreeSet::new();
    let (layer, highlight) = match &h {
        HandleData::Raster { product, region, dates, cells } => {
            let m = means(s, *product, cells, dates);
            accessed = h.selection_keys();
            let layer = MapLayer {
                product: *product,
                region: region.clone(),
                date: date_label(dates),
                style,
                handle,
                cells: m.keys().copied().collect(),
                values: m.values().map(|v| (v * 1e4).round() / 1e4).collect(),
            };
            (layer, None)
        }
        HandleData::Cells { product, region, dates, cells, label } => {
            let cells: Vec<Cell> = cells.iter().copied().collect();
            let layer = MapLayer {
                product: *product,
                region: region.clone(),
                date: date_label(dates),
                style,
                handle,
                cells: cells.clone(),
                values: vec![],
            };
            (layer, Some(Annotation { kind: AnnotationKind::Highlight, label: label.clone(), cells }))
        }
        HandleData::Detections { scene, region, cell, class, boxes } => {
            let layer = MapLayer {
                product: Product::Detection,
                region: Some(region.clone()),
                date: VISION_DATE.to_string(),
                style,
                handle,
                cells: vec![*cell],
                values: vec![],
            };
            let label = format!("{} {} in {scene}", boxes.len(), class.plural());
            (layer, Some(Annotation { kind: AnnotationKind::Highlight, label, cells: vec![*cell] }))
        }
    };
    let product = layer.product;
    let n_cells = layer.cells.len();
    let map = s.map_mut();
    let n = map.add_layer(layer);
    if let Some(a) = highlight {
        map.annotate(a);
    }
    Ok(ToolOutput {
        payload: json!({"layers": n, "added": product.key(), "cells": n_cells}),
        accessed,
    })
}

fn map_add_marker(s: &mut SandboxSession, args: &Args) -> Result<ToolOutput, ToolError> {
    let (region, cells) = arg_region(s, args, "region")?;
    let label = match args.get("label") {
        None | Some(Value::Null) => region.as_str().to_string(),
        Some(_) => arg_str(args, "label")?.to_string(),
    };
    let anchor = super::regions::region_anchor(&cells).expect("regions are nonempty");
    s.map_mut().annotate(Annotation { kind: AnnotationKind::Marker, label: label.clone(), cells: vec![anchor] });
    Ok(ToolOutput::new(json!({"marker": label, "cell": [anchor.row, anchor.col]})))
}

fn map_snapshot(s: &mut SandboxSession, _args: &Args) -> Result<ToolOutput, ToolError> {
    let m = s.map();
    Ok(ToolOutput::new(json!({"layers": m.summary(), "annotations": m.annotations.len()})))
}
