//! Shared domain types.
//!
//! Everything here is plain data with validation and serde. The
//! JSON field names are part of the on-disk format (tasks.jsonl, golds.jsonl,
//! trace documents) and must not be renamed.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("unknown agent domain '{0}'")]
    Domain(String),
    #[error("unknown product '{0}'")]
    Product(String),
    #[error("invalid date '{0}' (expected YYYY or YYYY-MM)")]
    Period(String),
    #[error("invalid date range '{0}'")]
    DateRange(String),
}

/// The eight agents. The first five are task domains, the last three are
/// the shared utility agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Agriculture,
    Climate,
    Urban,
    Forestry,
    Vision,
    Database,
    #[serde(rename = "dataops")]
    DataOps,
    Map,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::Agriculture,
        Domain::Climate,
        Domain::Urban,
        Domain::Forestry,
        Domain::Vision,
        Domain::Database,
        Domain::DataOps,
        Domain::Map,
    ];

    /// Order in which toolkits are registered for the context-budget
    /// ablation: utility agents first so that every configuration can load
    /// and plot data.
    pub const TOOLKIT_ORDER: [Domain; 8] = [
        Domain::Database,
        Domain::DataOps,
        Domain::Map,
        Domain::Agriculture,
        Domain::Climate,
        Domain::Urban,
        Domain::Forestry,
        Domain::Vision,
    ];

    pub fn agent_name(self) -> &'static str {
        match self {
            Domain::Agriculture => "Agriculture",
            Domain::Climate => "Climate",
            Domain::Urban => "Urban",
            Domain::Forestry => "Forestry",
            Domain::Vision => "Vision",
            Domain::Database => "Database",
            Domain::DataOps => "DataOps",
            Domain::Map => "Map",
        }
    }

    /// Lowercase identifier, identical to the serde form.
    pub fn key(self) -> &'static str {
        match self {
            Domain::Agriculture => "agriculture",
            Domain::Climate => "climate",
            Domain::Urban => "urban",
            Domain::Forestry => "forestry",
            Domain::Vision => "vision",
            Domain::Database => "database",
            Domain::DataOps => "dataops",
            Domain::Map => "map",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.agent_name())
    }
}

impl FromStr for Domain {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match norm.as_str() {
            "agriculture" | "agri" => Domain::Agriculture,
            "climate" => Domain::Climate,
            "urban" => Domain::Urban,
            "forestry" | "forest" => Domain::Forestry,
            "vision" => Domain::Vision,
            "database" | "db" => Domain::Database,
            "dataops" => Domain::DataOps,
            "map" => Domain::Map,
            _ => return Err(ParseError::Domain(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Product {
    Ndvi,
    RefB2,
    Lst,
    Aod550,
    BuiltS,
    Population,
    Canopy,
    Treeloss,
    Detection,
    Lcc,
}

impl Product {
    /// Gridded products with an error metric, in report column order.
    pub const RASTER: [Product; 8] = [
        Product::Ndvi,
        Product::RefB2,
        Product::Aod550,
        Product::Lst,
        Product::BuiltS,
        Product::Population,
        Product::Treeloss,
        Product::Canopy,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Product::Ndvi => "ndvi",
            Product::RefB2 => "ref_b2",
            Product::Lst => "lst",
            Product::Aod550 => "aod550",
            Product::BuiltS => "built_s",
            Product::Population => "population",
            Product::Canopy => "canopy",
            Product::Treeloss => "treeloss",
            Product::Detection => "detection",
            Product::Lcc => "lcc",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Product::Ndvi => "NDVI",
            Product::RefB2 => "Ref B2",
            Product::Lst => "LST",
            Product::Aod550 => "AOD550",
            Product::BuiltS => "Built-S",
            Product::Population => "Population",
            Product::Canopy => "Canopy",
            Product::Treeloss => "Treeloss",
            Product::Detection => "Detection",
            Product::Lcc => "LCC",
        }
    }

    pub fn is_raster(self) -> bool {
        !matches!(self, Product::Detection | Product::Lcc)
    }
}

impl fmt::Display for Product {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Product {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match norm.as_str() {
            "ndvi" => Product::Ndvi,
            "refb2" | "b2" | "reflectance" => Product::RefB2,
            "lst" => Product::Lst,
            "aod550" | "aod" | "aod055" => Product::Aod550,
            "builts" | "builtup" | "built" => Product::BuiltS,
            "population" | "pop" => Product::Population,
            "canopy" => Product::Canopy,
            "treeloss" | "loss" => Product::Treeloss,
            "detection" => Product::Detection,
            "lcc" | "landcover" => Product::Lcc,
            _ => return Err(ParseError::Product(s.to_string())),
        })
    }
}

/// An ISO month (`2024-03`) or year (`2020`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Period {
    pub year: u16,
    pub month: Option<u8>,
}

impl Period {
    pub fn month(year: u16, month: u8) -> Self {
        assert!((1..=12).contains(&month), "month out of range: {month}");
        Period { year, month: Some(month) }
    }

    pub fn year(year: u16) -> Self {
        Period { year, month: None }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.month {
            Some(m) => write!(f, "{:04}-{:02}", self.year, m),
            None => write!(f, "{:04}", self.year),
        }
    }
}

impl FromStr for Period {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let err = || ParseError::Period(s.to_string());
        let (y, m) = match t.split_once('-') {
            Some((y, m)) => (y, Some(m)),
            None => (t, None),
        };
        if y.len() != 4 {
            return Err(err());
        }
        let year: u16 = y.parse().map_err(|_| err())?;
        let month = match m {
            Some(m) => {
                let m: u8 = m.parse().map_err(|_| err())?;
                if !(1..=12).contains(&m) {
                    return Err(err());
                }
                Some(m)
            }
            None => None,
        };
        Ok(Period { year, month })
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Inclusive range of periods. Serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(Period, Period)", into = "(Period, Period)")]
pub struct DateRange {
    pub start: Period,
    pub end: Period,
}

impl From<(Period, Period)> for DateRange {
    fn from((start, end): (Period, Period)) -> Self {
        DateRange { start, end }
    }
}

impl From<DateRange> for (Period, Period) {
    fn from(r: DateRange) -> Self {
        (r.start, r.end)
    }
}

impl DateRange {
    pub fn new(start: Period, end: Period) -> Self {
        DateRange { start, end }
    }

    pub fn single(p: Period) -> Self {
        DateRange { start: p, end: p }
    }

    pub fn contains(&self, p: Period) -> bool {
        self.start <= p && p <= self.end
    }

    /// Canonical text form used in tool arguments: `2024-01..2024-12`.
    pub fn canonical(&self) -> String {
        format!("{}..{}", self.start, self.end)
    }

    /// Accepts `a..b`, `a/b`, `a to b`, or a single period.
    pub fn parse_text(s: &str) -> Result<Self, ParseError> {
        let t = s.trim();
        let err = || ParseError::DateRange(s.to_string());
        let parts: Vec<&str> = if t.contains("..") {
            t.split("..").collect()
        } else if t.contains('/') {
            t.split('/').collect()
        } else if t.contains(" to ") {
            t.split(" to ").collect()
        } else {
            vec![t]
        };
        let r = match parts.as_slice() {
            [one] => DateRange::single(one.parse().map_err(|_| err())?),
            [a, b] => DateRange::new(a.parse().map_err(|_| err())?, b.parse().map_err(|_| err())?),
            _ => return Err(err()),
        };
        if r.start > r.end || r.start.month.is_some() != r.end.month.is_some() {
            return Err(err());
        }
        Ok(r)
    }

    /// Parses either a text form or a JSON two-element array.
    pub fn from_json(v: &Value) -> Result<Self, ParseError> {
        match v {
            Value::String(s) => DateRange::parse_text(s),
            Value::Array(a) if a.len() == 2 => {
                let a0 = a[0].as_str().ok_or_else(|| ParseError::DateRange(v.to_string()))?;
                let a1 = a[1].as_str().ok_or_else(|| ParseError::DateRange(v.to_string()))?;
                DateRange::parse_text(&format!("{a0}..{a1}"))
            }
            _ => Err(ParseError::DateRange(v.to_string())),
        }
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Grid index; row 0 is the north edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Cell {
    pub row: u32,
    pub col: u32,
}

impl Cell {
    pub fn new(row: u32, col: u32) -> Self {
        Cell { row, col }
    }
}

impl From<(u32, u32)> for Cell {
    fn from((row, col): (u32, u32)) -> Self {
        Cell { row, col }
    }
}

impl From<Cell> for (u32, u32) {
    fn from(c: Cell) -> Self {
        (c.row, c.col)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// One addressable datapoint. Ordered by product, then cell, then date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DataPointKey {
    pub product: Product,
    pub cell: Cell,
    pub date: Period,
}

impl DataPointKey {
    pub fn new(product: Product, cell: Cell, date: Period) -> Self {
        DataPointKey { product, cell, date }
    }
}

/// Lowercased region name.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionRef(String);

impl RegionRef {
    pub fn new(name: &str) -> Self {
        RegionRef(name.trim().to_lowercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RegionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPrompt {
    pub id: String,
    pub domain: Domain,
    pub text: String,
    pub region: RegionRef,
    #[serde(default)]
    pub date_range: Option<DateRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldStep {
    pub agent_name: Domain,
    pub tool_name: String,
    pub canonical_args: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSolution {
    pub task_id: String,
    pub steps: Vec<GoldStep>,
    pub gold_datapoints: BTreeSet<DataPointKey>,
}

impl GoldSolution {
    pub fn agents_in_order(&self) -> Vec<Domain> {
        let mut out: Vec<Domain> = Vec::new();
        for s in &self.steps {
            if out.last() != Some(&s.agent_name) {
                out.push(s.agent_name);
            }
        }
        out
    }

    pub fn datapoints_for(&self, product: Product) -> BTreeSet<DataPointKey> {
        self.gold_datapoints.iter().filter(|k| k.product == product).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Product,
    Region,
    DateRange,
    Handle,
    Number,
    Integer,
    Comparator,
    Boolean,
    Scene,
    ObjectClass,
    Style,
    Text,
}

impl ParamKind {
    pub fn key(self) -> &'static str {
        match self {
            ParamKind::Product => "product",
            ParamKind::Region => "region",
            ParamKind::DateRange => "date_range",
            ParamKind::Handle => "handle",
            ParamKind::Number => "number",
            ParamKind::Integer => "integer",
            ParamKind::Comparator => "comparator",
            ParamKind::Boolean => "boolean",
            ParamKind::Scene => "scene",
            ParamKind::ObjectClass => "object_class",
            ParamKind::Style => "style",
            ParamKind::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamKind) -> Self {
        ParamSpec { name: name.to_string(), kind, required: true }
    }

    pub fn optional(name: &str, kind: ParamKind) -> Self {
        ParamSpec { name: name.to_string(), kind, required: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub agent: Domain,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub schema_token_cost: u32,
}

impl ToolSpec {
    /// Name used when every toolkit is exposed to one model at once.
    pub fn qualified_name(&self) -> String {
        format!("{}__{}", self.agent.key(), self.name)
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub agent: Domain,
    pub tool: String,
    pub args: BTreeMap<String, Value>,
    pub result_status: CallStatus,
    /// For errors this starts with the error code, e.g. `MissingProduct: ...`.
    pub result_payload: String,
    pub accessed: BTreeSet<DataPointKey>,
}

impl ToolCall {
    pub fn error_code(&self) -> Option<&str> {
        match self.result_status {
            CallStatus::Ok => None,
            CallStatus::Error => Some(self.result_payload.split(':').next().unwrap_or("").trim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTask {
    pub agent: Domain,
    pub subprompt: String,
}

impl SubTask {
    pub fn new(agent: Domain, subprompt: impl Into<String>) -> Self {
        SubTask { agent, subprompt: subprompt.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub subtasks: Vec<SubTask>,
    pub revision: u32,
}

impl Schedule {
    pub fn agents(&self) -> Vec<Domain> {
        self.subtasks.iter().map(|s| s.agent).collect()
    }

    /// Program-like text form: `schedule = [Database("..."), Map("...")]`.
    pub fn to_program(&self) -> String {
        let items: Vec<String> = self
            .subtasks
            .iter()
            .map(|s| {
                let escaped = s.subprompt.replace('\\', "\\\\").replace('"', "\\\"");
                format!("{}(\"{}\")", s.agent.agent_name(), escaped)
            })
            .collect();
        format!("schedule = [{}]", items.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    SingleAgent,
    CompositionOnly,
    LedgerLoop,
    Hybrid,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::SingleAgent,
        StrategyKind::CompositionOnly,
        StrategyKind::LedgerLoop,
        StrategyKind::Hybrid,
    ];

    pub fn key(self) -> &'static str {
        match self {
            StrategyKind::SingleAgent => "single_agent",
            StrategyKind::CompositionOnly => "composition_only",
            StrategyKind::LedgerLoop => "ledger_loop",
            StrategyKind::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "single_agent" | "single" => Ok(StrategyKind::SingleAgent),
            "composition_only" | "composition" => Ok(StrategyKind::CompositionOnly),
            "ledger_loop" | "ledger" => Ok(StrategyKind::LedgerLoop),
            "hybrid" => Ok(StrategyKind::Hybrid),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Completed,
    BudgetExhausted,
    MaxRevisions,
    ContextOverflow,
    /// The run ended without the task being verified complete and without
    /// hitting one of the bounds above (no recovery attempted, or no usable
    /// schedule).
    Incomplete,
}

impl Terminal {
    pub fn key(self) -> &'static str {
        match self {
            Terminal::Completed => "completed",
            Terminal::BudgetExhausted => "budget_exhausted",
            Terminal::MaxRevisions => "max_revisions",
            Terminal::ContextOverflow => "context_overflow",
            Terminal::Incomplete => "incomplete",
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

impl Usage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        Usage { prompt_tokens, completion_tokens, total_tokens: prompt_tokens + completion_tokens }
    }
}

/// Per-call usage plus run totals. Totals are always the sum over `calls`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
    pub calls: Vec<Usage>,
    /// Sum of endpoint-reported totals, when every call reported one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_total: Option<u64>,
}

impl TokenUsage {
    pub fn record(&mut self, usage: Usage, reported: Option<Usage>) {
        let first = self.calls.is_empty();
        self.prompt_tokens += usage.prompt_tokens;
        self.completion_tokens += usage.completion_tokens;
        self.total_tokens += usage.total_tokens;
        self.calls.push(usage);
        self.reported_total = match (first, self.reported_total, reported) {
            (true, _, Some(r)) => Some(r.total_tokens),
            (false, Some(acc), Some(r)) => Some(acc + r.total_tokens),
            _ => None,
        };
    }

    pub fn absorb(&mut self, other: &TokenUsage) {
        let first = self.calls.is_empty();
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.total_tokens += other.total_tokens;
        self.calls.extend(other.calls.iter().copied());
        self.reported_total = match (first, self.reported_total, other.reported_total) {
            (true, _, r) => r,
            (false, Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }

    pub fn is_consistent(&self) -> bool {
        let p: u64 = self.calls.iter().map(|c| c.prompt_tokens).sum();
        let c: u64 = self.calls.iter().map(|c| c.completion_tokens).sum();
        let t: u64 = self.calls.iter().map(|c| c.total_tokens).sum();
        p == self.prompt_tokens
            && c == self.completion_tokens
            && t == self.total_tokens
            && self.total_tokens == self.prompt_tokens + self.completion_tokens
            && self.calls.iter().all(|u| u.total_tokens == u.prompt_tokens + u.completion_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Done,
    Failed,
    NeedsDependency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyHint {
    pub agent: Domain,
    pub reason: String,
}

/// Compact per-subtask record kept in the trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: Domain,
    pub revision: u32,
    pub subprompt: String,
    pub status: AgentStatus,
    pub summary: String,
    pub dependency_hint: Option<DependencyHint>,
    pub tool_call_count: usize,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionVerdict {
    pub complete: bool,
    pub missing: String,
    pub revision_directive: Option<String>,
}

impl CompletionVerdict {
    pub fn complete() -> Self {
        CompletionVerdict { complete: true, missing: String::new(), revision_directive: None }
    }

    pub fn incomplete(missing: impl Into<String>, directive: Option<String>) -> Self {
        let mut missing = missing.into();
        if missing.trim().is_empty() {
            missing = "unverifiable".to_string();
        }
        CompletionVerdict { complete: false, missing, revision_directive: directive }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub task_id: String,
    pub strategy: StrategyKind,
    pub executed_steps: Vec<ToolCall>,
    pub schedules: Vec<Schedule>,
    pub token_usage: TokenUsage,
    pub final_answer: String,
    pub terminal: Terminal,
    #[serde(default)]
    pub agent_results: Vec<AgentOutcome>,
    #[serde(default)]
    pub verdicts: Vec<CompletionVerdict>,
}

impl ExecutionTrace {
    pub fn accessed(&self) -> BTreeSet<DataPointKey> {
        self.executed_steps.iter().flat_map(|c| c.accessed.iter().copied()).collect()
    }

    /// Schedule revisions must read 0, 1, ..., n.
    pub fn revisions_contiguous(&self) -> bool {
        self.schedules.iter().enumerate().all(|(i, s)| s.revision as usize == i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn period_round_trip() {
        for s in ["2024-01", "2024-12", "2020"] {
            let p: Period = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("2024-13".parse::<Period>().is_err());
        assert!("24-01".parse::<Period>().is_err());
    }

    #[test]
    fn date_range_text_forms() {
        let r = DateRange::parse_text("2024-01..2024-12").unwrap();
        assert_eq!(r.canonical(), "2024-01..2024-12");
        assert_eq!(DateRange::parse_text("2024-01/2024-12").unwrap(), r);
        assert_eq!(DateRange::parse_text("2024-01 to 2024-12").unwrap(), r);
        assert_eq!(DateRange::parse_text("2020").unwrap().canonical(), "2020..2020");
        assert!(DateRange::parse_text("2024-12..2024-01").is_err());
        assert!(DateRange::parse_text("2020..2024-01").is_err());
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(j, r#"["2024-01","2024-12"]"#);
    }

    #[test]
    fn domain_parsing_accepts_aliases() {
        assert_eq!("Forest".parse::<Domain>().unwrap(), Domain::Forestry);
        assert_eq!("Data Ops".parse::<Domain>().unwrap(), Domain::DataOps);
        assert_eq!("DATABASE".parse::<Domain>().unwrap(), Domain::Database);
        assert!("Weather".parse::<Domain>().is_err());
        assert_eq!(serde_json::to_string(&Domain::DataOps).unwrap(), "\"dataops\"");
    }

    #[test]
    fn datapoint_key_json_shape() {
        let k = DataPointKey::new(Product::RefB2, Cell::new(3, 4), Period::month(2024, 2));
        let j = serde_json::to_string(&k).unwrap();
        assert_eq!(j, r#"{"product":"ref_b2","cell":[3,4],"date":"2024-02"}"#);
    }

    #[test]
    fn datapoint_order_is_product_cell_date() {
        let a = DataPointKey::new(Product::Ndvi, Cell::new(0, 5), Period::month(2024, 12));
        let b = DataPointKey::new(Product::Ndvi, Cell::new(1, 0), Period::month(2024, 1));
        let c = DataPointKey::new(Product::Lst, Cell::new(0, 0), Period::month(2024, 1));
        let mut v = vec![c, b, a];
        v.sort();
        assert_eq!(v, vec![a, b, c]);
    }

    #[test]
    fn token_usage_accumulates() {
        let mut t = TokenUsage::default();
        t.record(Usage::new(10, 2), Some(Usage::new(11, 2)));
        t.record(Usage::new(5, 5), Some(Usage::new(5, 6)));
        assert_eq!(t.total_tokens, 22);
        assert_eq!(t.reported_total, Some(24));
        assert!(t.is_consistent());
        t.record(Usage::new(1, 1), None);
        assert_eq!(t.reported_total, None);
        assert!(t.is_consistent());
    }

    #[test]
    fn schedule_program_escapes_quotes() {
        let s = Schedule {
            subtasks: vec![SubTask::new(Domain::Map, r#"Plot "hot" cells"#)],
            revision: 0,
        };
        assert_eq!(s.to_program(), r#"schedule = [Map("Plot \"hot\" cells")]"#);
    }
}
