//! Maps a free-form chat prompt onto the closest template so the scripted
//! backend can play it back.

use std::sync::OnceLock;

use regex::Regex;

use super::templates::{builtin_templates, Slots, STYLES};
use crate::sandbox::regions::REGION_NAMES;
use crate::sandbox::vision::ObjectClass;
use crate::types::{DateRange, Domain, GoldStep, Product, RegionRef, TaskPrompt};

#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub template: &'static str,
    pub slots: Slots,
    pub task: TaskPrompt,
    pub steps: Vec<GoldStep>,
}

fn re(cell: &'static OnceLock<Regex>, pat: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pat).expect("static regex"))
}

fn date_slot(text: &str) -> (Option<String>, String) {
    static SPAN: OnceLock<Regex> = OnceLock::new();
    static MONTH: OnceLock<Regex> = OnceLock::new();
    static YEAR: OnceLock<Regex> = OnceLock::new();
    let span = re(&SPAN, r"(\d{4}-\d{2})\s*(?:to|\.\.|-|/)\s*(\d{4}-\d{2})");
    if let Some(c) = span.captures(text) {
        return (Some(format!("{}..{}", &c[1], &c[2])), span.replace_all(text, " ").into_owned());
    }
    let month = re(&MONTH, r"\b(\d{4}-\d{2})\b");
    if let Some(c) = month.captures(text) {
        return (Some(c[1].to_string()), month.replace_all(text, " ").into_owned());
    }
    let year = re(&YEAR, r"\b((?:19|20)\d{2})\b");
    if let Some(c) = year.captures(text) {
        return (Some(c[1].to_string()), year.replace_all(text, " ").into_owned());
    }
    (None, text.to_string())
}

fn number_after(text: &str) -> Option<f64> {
    static NUM: OnceLock<Regex> = OnceLock::new();
    re(&NUM, r"(?i)\b(?:above|below|exceeds?|exceeding|over|under|than)\s+(\d+(?:\.\d+)?)")
        .captures(text)
        .and_then(|c| c[1].parse().ok())
}

fn cluster_size(text: &str) -> Option<i64> {
    static N: OnceLock<Regex> = OnceLock::new();
    re(&N, r"(?i)at least (\d+) cells").captures(text).and_then(|c| c[1].parse().ok())
}

const STOP: [&str; 12] = ["the", "a", "an", "ndvi", "lst", "aod550", "scene", "band", "this", "that", "areas", "cells"];

fn region_slot(text: &str, lower: &str) -> Option<String> {
    static WORDS: OnceLock<Regex> = OnceLock::new();
    for r in REGION_NAMES {
        if lower.split(|c: char| !c.is_alphanumeric()).any(|w| w == r) {
            return Some(r.to_string());
        }
    }
    // An unknown place name still becomes the region so the run fails
    // visibly at load time instead of guessing.
    re(&WORDS, r"\b(?:in|over|for|of|around)\s+([A-Z][A-Za-z]+)")
        .captures_iter(text)
        .map(|c| c[1].to_lowercase())
        .find(|w| !STOP.contains(&w.as_str()))
}

fn scene_slot(lower: &str) -> Option<String> {
    static SCENE: OnceLock<Regex> = OnceLock::new();
    re(&SCENE, r"\b([a-z]+-[1-9])\b").captures(lower).map(|c| c[1].to_string())
}

fn product_slot(lower: &str) -> Option<Product> {
    let table: [(&str, Product); 10] = [
        ("ndvi", Product::Ndvi),
        ("band 2", Product::RefB2),
        ("reflectance", Product::RefB2),
        ("lst", Product::Lst),
        ("land surface temperature", Product::Lst),
        ("aod", Product::Aod550),
        ("built", Product::BuiltS),
        ("population", Product::Population),
        ("canopy", Product::Canopy),
        ("tree loss", Product::Treeloss),
    ];
    table.iter().find(|(k, _)| lower.contains(k)).map(|(_, p)| *p)
}

fn class_slot(lower: &str) -> Option<ObjectClass> {
    ObjectClass::ALL
        .into_iter()
        .find(|c| lower.contains(c.plural()) || lower.contains(&c.key().replace('_', " ")))
}

fn pick(lower: &str, has_product: bool) -> Option<&'static str> {
    let any = |ws: &[&str]| ws.iter().any(|w| lower.contains(w));
    Some(if any(&["crop rotation"]) {
        "crop_rotation"
    } else if any(&["heatwave", "heat wave"]) {
        "heatwave"
    } else if any(&["haze", "aerosol", "aod"]) {
        "haze"
    } else if any(&["overpopulat", "hotspot"]) {
        "overpopulation"
    } else if any(&["reforest"]) {
        "reforestation"
    } else if any(&["land cover", "landcover"]) {
        "classify"
    } else if any(&["how many", "count "]) {
        "count_objects"
    } else if any(&["detect"]) {
        "detect_plot"
    } else if any(&["marker"]) {
        "marker"
    } else if any(&["reflectance", "band 2"]) && !any(&["mean", "load"]) {
        "bright_fields"
    } else if any(&["built-up", "built up"]) {
        "dense_builtup"
    } else if any(&["canopy"]) && any(&["below", "low canopy"]) {
        "low_canopy"
    } else if has_product && crate::orchestrator::wants_plot(lower) && any(&["below"]) {
        "low_plot"
    } else if has_product && crate::orchestrator::wants_plot(lower) {
        "plot_product"
    } else if has_product && any(&["above"]) {
        "threshold_above"
    } else if has_product {
        "load_mean"
    } else {
        return None;
    })
}

fn default_threshold(code: &str, product: Option<Product>) -> Option<f64> {
    Some(match code {
        "crop_rotation" => 0.3,
        "bright_fields" => 0.4,
        "heatwave" => 305.0,
        "haze" => 0.8,
        "overpopulation" => 10_000.0,
        "dense_builtup" => 600_000.0,
        "reforestation" | "low_canopy" => 20.0,
        "threshold_above" | "low_plot" => match product {
            Some(Product::Ndvi) => 0.3,
            Some(Product::Lst) => 300.0,
            _ => 0.5,
        },
        _ => return None,
    })
}

/// Best-effort reading of `text`; `None` when no template fits or a
/// required slot (region or scene) is absent.
pub fn interpret(id: &str, text: &str) -> Option<Interpretation> {
    let (range, rest) = date_slot(text);
    let lower = rest.to_lowercase();
    let product = product_slot(&lower);
    let code = pick(&lower, product.is_some())?;
    let template = builtin_templates().into_iter().find(|t| t.code == code)?;
    let annual = matches!(
        (code, product),
        ("overpopulation" | "dense_builtup" | "reforestation" | "low_canopy", _)
            | (_, Some(Product::BuiltS | Product::Population | Product::Canopy | Product::Treeloss))
    );
    let mut slots = Slots {
        region: region_slot(&rest, &lower),
        date_range: Some(if annual { "2020".into() } else { range.clone().unwrap_or_else(|| "2024".into()) }),
        threshold: number_after(&rest).or(default_threshold(code, product)),
        metric: product.map(|p| p.key().to_string()),
        style: STYLES.iter().find(|s| lower.contains(*s)).map(|s| s.to_string()),
        scene: scene_slot(&lower),
        count: cluster_size(&rest).or(Some(2)),
        label: None,
    };
    match template.domain {
        Domain::Vision => {
            let scene = slots.scene.clone()?;
            slots.region = scene.rsplit_once('-').map(|(r, _)| r.to_string());
            slots.metric = Some(class_slot(&lower).unwrap_or(ObjectClass::Airplane).key().to_string());
        }
        _ => {
            slots.region.as_ref()?;
        }
    }
    if code == "haze" {
        slots.metric = Some(if lower.contains("max") { "max" } else { "mean" }.into());
    }
    if matches!(code, "overpopulation" | "dense_builtup" | "reforestation" | "low_canopy" | "plot_product") && slots.style.is_none() {
        slots.style = Some("viridis".into());
    }
    if code == "marker" {
        slots.label = Some("site".into());
    }
    let steps = (template.recipe)(&slots);
    let task = TaskPrompt {
        id: id.to_string(),
        domain: template.domain,
        text: text.to_string(),
        region: RegionRef::new(slots.region.as_deref().unwrap_or_default()),
        date_range: slots.date_range.as_deref().and_then(|d| DateRange::parse_text(d).ok()),
    };
    Some(Interpretation { template: code, slots, task, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tools(i: &Interpretation) -> Vec<String> {
        i.steps.iter().map(|s| format!("{}.{}", s.agent_name, s.tool_name)).collect()
    }

    #[test]
    fn crop_rotation_prompt() {
        let i = interpret("c1", "From NDVI, recommend crop rotation areas in Brisbane").unwrap();
        assert_eq!(i.template, "crop_rotation");
        assert_eq!(i.task.region.as_str(), "brisbane");
        assert_eq!(
            tools(&i),
            vec!["Database.load_product", "DataOps.filter_region", "Agriculture.low_ndvi_clusters", "Map.map_add_layer"]
        );
    }

    #[test]
    fn unknown_region_is_kept() {
        let i = interpret("c2", "Identify heatwave zones in Atlantis and plot them").unwrap();
        assert_eq!(i.template, "heatwave");
        assert_eq!(i.slots.region.as_deref(), Some("atlantis"));
    }

    #[test]
    fn slots_are_read() {
        let i = interpret("c3", "Which cells in Sydney have mean LST above 300 from 2024-01 to 2024-03?").unwrap();
        assert_eq!(i.template, "threshold_above");
        assert_eq!(i.slots.threshold, Some(300.0));
        assert_eq!(i.slots.date_range.as_deref(), Some("2024-01..2024-03"));
        let v = interpret("c4", "How many ships are visible in scene gympie-2?").unwrap();
        assert_eq!(v.template, "count_objects");
        assert_eq!(v.slots.metric.as_deref(), Some("ship"));
        assert!(interpret("c5", "hello there").is_none());
    }
}
