//! Scores traces against gold solutions and renders benchmark tables.
//!
//! Correctness is the LCS of executed and gold (agent, tool, args) triples
//! over the gold length. Only calls that returned successfully count as
//! executed steps. The error metric per product is the mean squared
//! percentage error over the gold datapoints, where a datapoint that was
//! never accessed contributes a 100% error and an accessed one contributes
//! nothing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::sandbox::vision::{match_boxes, BBox, LandCover, ObjectClass};
use crate::sandbox::FixtureMetadata;
use crate::types::{
    CallStatus, DataPointKey, DateRange, Domain, ExecutionTrace, GoldSolution, GoldStep, Product, StrategyKind, Terminal,
    ToolCall,
};

pub const REL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("EmptyGold: no gold datapoints for {0}")]
    EmptyGold(Product),
    #[error("no scores to aggregate")]
    NoScores,
    #[error("report csv: {0}")]
    Csv(String),
}

/// Argument value after normalization.
#[derive(Debug, Clone)]
pub enum Norm {
    Handle,
    Num(f64),
    Text(String),
    Bool(bool),
    Other(String),
}

impl PartialEq for Norm {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Norm::Handle, Norm::Handle) => true,
            (Norm::Num(a), Norm::Num(b)) => nums_match(*a, *b),
            (Norm::Text(a), Norm::Text(b)) => a == b,
            (Norm::Bool(a), Norm::Bool(b)) => a == b,
            (Norm::Other(a), Norm::Other(b)) => a == b,
            _ => false,
        }
    }
}

pub fn nums_match(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

fn is_handle(s: &str) -> bool {
    let t = s.trim();
    t.starts_with("$handle") || (t.starts_with("@h") && t.len() > 2 && t[2..].chars().all(|c| c.is_ascii_digit()))
}

pub fn normalize_value(key: &str, v: &Value) -> Norm {
    match v {
        Value::String(s) if is_handle(s) => Norm::Handle,
        Value::String(s) if key == "date_range" => match DateRange::parse_text(s) {
            Ok(r) => Norm::Text(r.canonical()),
            Err(_) => Norm::Text(s.trim().to_string()),
        },
        Value::Array(_) if key == "date_range" => match DateRange::from_json(v) {
            Ok(r) => Norm::Text(r.canonical()),
            Err(_) => Norm::Other(v.to_string()),
        },
        Value::String(s) if key == "product" => match s.parse::<Product>() {
            Ok(p) => Norm::Text(p.key().to_string()),
            Err(_) => Norm::Text(s.trim().to_lowercase()),
        },
        Value::String(s) => match s.trim().parse::<f64>() {
            Ok(x) if key != "label" && key != "scene" => Norm::Num(x),
            _ => Norm::Text(s.trim().to_lowercase()),
        },
        Value::Number(n) => Norm::Num(n.as_f64().unwrap_or(f64::NAN)),
        Value::Bool(b) => Norm::Bool(*b),
        Value::Null => Norm::Other("null".into()),
        other => Norm::Other(other.to_string()),
    }
}

/// Sorted key/value pairs; null-valued keys are dropped.
pub fn normalize_args(args: &BTreeMap<String, Value>) -> Vec<(String, Norm)> {
    args.iter().filter(|(_, v)| !v.is_null()).map(|(k, v)| (k.clone(), normalize_value(k, v))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub agent: Domain,
    pub tool: String,
    pub args: Vec<(String, Norm)>,
}

impl Triple {
    pub fn of_call(c: &ToolCall) -> Self {
        Triple { agent: c.agent, tool: c.tool.clone(), args: normalize_args(&c.args) }
    }

    pub fn of_gold(s: &GoldStep) -> Self {
        Triple { agent: s.agent_name, tool: s.tool_name.clone(), args: normalize_args(&s.canonical_args) }
    }
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub fn correctness_rate(executed: &[ToolCall], gold: &GoldSolution) -> f64 {
    if gold.steps.is_empty() {
        return 0.0;
    }
    let ex: Vec<Triple> = executed.iter().filter(|c| c.result_status == CallStatus::Ok).map(Triple::of_call).collect();
    let g: Vec<Triple> = gold.steps.iter().map(Triple::of_gold).collect();
    lcs_len(&ex, &g) as f64 / g.len() as f64
}

/// Missing-only error for one product. With `penalize_extras`, accessed
/// points of that product outside the gold set also count as errors and
/// join the denominator.
pub fn mspe(
    accessed: &BTreeSet<DataPointKey>,
    gold: &BTreeSet<DataPointKey>,
    product: Product,
    penalize_extras: bool,
) -> Result<f64, EvalError> {
    let g: Vec<&DataPointKey> = gold.iter().filter(|k| k.product == product).collect();
    if g.is_empty() {
        return Err(EvalError::EmptyGold(product));
    }
    // e = 1 for a missed point (its whole value is error), 0 otherwise.
    let err = |k: &&DataPointKey| -> f64 { if accessed.contains(*k) { 0.0 } else { 1.0 } };
    let mut sq: f64 = g.iter().map(|k| err(k) * err(k)).sum();
    let mut n = g.len();
    if penalize_extras {
        let extra = accessed.iter().filter(|k| k.product == product && !gold.contains(k)).count();
        sq += extra as f64;
        n += extra;
    }
    Ok(100.0 * (1.0 / n as f64) * sq)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: String,
    pub correctness: f64,
    pub epsilon_by_metric: BTreeMap<Product, f64>,
    pub tokens: u64,
    pub terminal: Terminal,
}

pub fn score_task(trace: &ExecutionTrace, gold: &GoldSolution) -> TaskScore {
    let accessed = trace.accessed();
    let epsilon_by_metric = Product::RASTER
        .iter()
        .filter_map(|p| mspe(&accessed, &gold.gold_datapoints, *p, false).ok().map(|e| (*p, e)))
        .collect();
    TaskScore {
        task_id: trace.task_id.clone(),
        correctness: correctness_rate(&trace.executed_steps, gold),
        epsilon_by_metric,
        tokens: trace.token_usage.total_tokens,
        terminal: trace.terminal,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VisionTally {
    pub lcc_total: usize,
    pub lcc_correct: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl VisionTally {
    pub fn lcc_accuracy(&self) -> Option<f64> {
        (self.lcc_total > 0).then(|| 100.0 * self.lcc_correct as f64 / self.lcc_total as f64)
    }

    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp + self.fp + self.fn_ == 0 {
            return None;
        }
        Some(if denom == 0 { 0.0 } else { 100.0 * 2.0 * self.tp as f64 / denom as f64 })
    }
}

fn payload(c: &ToolCall) -> Option<Value> {
    (c.result_status == CallStatus::Ok).then(|| serde_json::from_str(&c.result_payload).ok()).flatten()
}

/// LCC accuracy and detection F1 over the vision steps of each gold. A gold
/// classification counts as correct when the last successful call on that
/// scene returned the true label; a gold detection is scored against the
/// last successful detection for that scene and class, and counts every
/// truth box as missed if there is none.
pub fn vision_scores(pairs: &[(&ExecutionTrace, &GoldSolution)], meta: &FixtureMetadata) -> VisionTally {
    let mut t = VisionTally::default();
    for (trace, gold) in pairs {
        for s in &gold.steps {
            let scene_id = s.canonical_args.get("scene").and_then(Value::as_str).unwrap_or("");
            let Some(scene) = meta.scene(scene_id) else {
                continue;
            };
            match s.tool_name.as_str() {
                "classify_landcover" => {
                    t.lcc_total += 1;
                    let got = trace
                        .executed_steps
                        .iter()
                        .rev()
                        .filter(|c| c.tool == "classify_landcover")
                        .filter_map(payload)
                        .find(|p| p["scene"] == scene_id)
                        .and_then(|p| p["landcover"].as_str().and_then(|l| l.parse::<LandCover>().ok()));
                    if got == Some(scene.landcover) {
                        t.lcc_correct += 1;
                    }
                }
                "detect_objects" => {
                    let Some(class) =
                        s.canonical_args.get("object_class").and_then(Value::as_str).and_then(|c| c.parse::<ObjectClass>().ok())
                    else {
                        continue;
                    };
                    let truth = scene.truth(class);
                    let pred: Option<Vec<BBox>> = trace
                        .executed_steps
                        .iter()
                        .rev()
                        .filter(|c| c.tool == "detect_objects")
                        .filter_map(payload)
                        .find(|p| p["scene"] == scene_id && p["class"] == class.key())
                        .map(|p| {
                            p["boxes"]
                                .as_array()
                                .into_iter()
                                .flatten()
                                .filter_map(|b| {
                                    let v: Vec<u32> = b.as_array()?.iter().filter_map(|x| x.as_u64().map(|n| n as u32)).collect();
                                    (v.len() == 4).then(|| BBox { class, x0: v[0], y0: v[1], x1: v[2], y1: v[3] })
                                })
                                .collect()
                        });
                    match pred {
                        Some(p) => {
                            let (tp, fp, fn_) = match_boxes(&p, &truth);
                            t.tp += tp;
                            t.fp += fp;
                            t.fn_ += fn_;
                        }
                        None => t.fn_ += truth.len(),
                    }
                }
                _ => {}
            }
        }
    }
    t
}

/// One table row. Values are rounded to two decimals so the CSV form
/// reproduces the report exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub strategy: StrategyKind,
    pub ts: bool,
    pub wm: bool,
    pub tasks: usize,
    pub correctness_pct: f64,
    pub avg_tokens_k: f64,
    pub eps: BTreeMap<Product, Option<f64>>,
    pub lcc_acc_pct: Option<f64>,
    pub det_f1_pct: Option<f64>,
    /// Runs that ended in `context_overflow`. Not part of the CSV.
    #[serde(default)]
    pub context_overflows: usize,
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(
    scores: &[TaskScore],
    strategy: StrategyKind,
    ts: bool,
    wm: bool,
    vision: Option<&VisionTally>,
) -> Result<BenchmarkReport, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let eps = Product::RASTER
        .iter()
        .map(|p| (*p, mean(scores.iter().filter_map(|s| s.epsilon_by_metric.get(p).copied())).map(r2)))
        .collect();
    Ok(BenchmarkReport {
        strategy,
        ts,
        wm,
        tasks: scores.len(),
        correctness_pct: r2(100.0 * mean(scores.iter().map(|s| s.correctness)).unwrap_or(0.0)),
        avg_tokens_k: r2(mean(scores.iter().map(|s| s.tokens as f64)).unwrap_or(0.0) / 1000.0),
        eps,
        lcc_acc_pct: vision.and_then(VisionTally::lcc_accuracy).map(r2),
        det_f1_pct: vision.and_then(VisionTally::f1).map(r2),
        context_overflows: scores.iter().filter(|s| s.terminal == Terminal::ContextOverflow).count(),
    })
}

pub const CSV_COLUMNS: [&str; 16] = [
    "strategy",
    "ts",
    "wm",
    "tasks",
    "correctness_pct",
    "avg_tokens_k",
    "eps_ndvi",
    "eps_ref_b2",
    "eps_aod550",
    "eps_lst",
    "eps_built_s",
    "eps_population",
    "eps_treeloss",
    "eps_canopy",
    "lcc_acc_pct",
    "det_f1_pct",
];

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.2}")).unwrap_or_default()
}

fn row(r: &BenchmarkReport) -> Vec<String> {
    let mut v = vec![
        r.strategy.to_string(),
        r.ts.to_string(),
        r.wm.to_string(),
        r.tasks.to_string(),
        format!("{:.2}", r.correctness_pct),
        format!("{:.2}", r.avg_tokens_k),
    ];
    v.extend(Product::RASTER.iter().map(|p| opt(r.eps.get(p).copied().flatten())));
    v.push(opt(r.lcc_acc_pct));
    v.push(opt(r.det_f1_pct));
    v
}

pub fn render_csv(reports: &[BenchmarkReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for r in reports {
        w.write_record(row(r)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchmarkReport>, EvalError> {
    let bad = |e: String| EvalError::Csv(e);
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rd.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let num = |s: &str| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("bad number '{s}'")))
        }
    };
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let mut eps = BTreeMap::new();
        for (k, p) in Product::RASTER.iter().enumerate() {
            eps.insert(*p, num(f(6 + k))?);
        }
        out.push(BenchmarkReport {
            strategy: f(0).parse().map_err(|_| bad(format!("bad strategy '{}'", f(0))))?,
            ts: f(1) == "true",
            wm: f(2) == "true",
            tasks: f(3).parse().map_err(|_| bad("bad task count".into()))?,
            correctness_pct: num(f(4))?.unwrap_or(0.0),
            avg_tokens_k: num(f(5))?.unwrap_or(0.0),
            eps,
            lcc_acc_pct: num(f(14))?,
            det_f1_pct: num(f(15))?,
            context_overflows: 0,
        });
    }
    Ok(out)
}

/// Aligned markdown table, one row per (strategy, TS, WM).
pub fn render_markdown(reports: &[BenchmarkReport]) -> String {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut v = row(r);
            v[1] = if r.ts { "yes" } else { "no" }.into();
            v[2] = if r.wm { "yes" } else { "no" }.into();
            v.iter_mut().filter(|c| c.is_empty()).for_each(|c| *c = "-".into());
            v
        })
        .collect();
    let widths: Vec<usize> =
        (0..CSV_COLUMNS.len()).map(|i| rows.iter().map(|r| r[i].len()).chain([CSV_COLUMNS[i].len()]).max().unwrap_or(0)).collect();
    let line = |cells: Vec<String>| {
        let padded: Vec<String> = cells.iter().enumerate().map(|(i, c)| format!("{c:<w$}", w = widths[i])).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut s = line(CSV_COLUMNS.iter().map(|c| c.to_string()).collect());
    s += &line(widths.iter().map(|w| "-".repeat(*w)).collect());
    for r in rows {
        s += &line(r);
    }
    s
}
