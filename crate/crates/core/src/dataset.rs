//! Dataset files and their consistency check.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::types::{DataPointKey, Domain, GoldSolution, TaskPrompt};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json { path: String, line: usize, source: serde_json::Error },
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), IoError> {
    let io = |source| IoError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for (i, item) in items.iter().enumerate() {
        let line = serde_json::to_string(item).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let io = |source| IoError::Io { path: path.display().to_string(), source };
    let r = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub trait ToolLookup {
    fn has_tool(&self, agent: Domain, tool: &str) -> bool;
}

pub trait DataBounds {
    fn contains(&self, key: &DataPointKey) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationError {
    EmptyTaskId,
    DuplicateTask(String),
    EmptyText(String),
    MissingGold(String),
    DuplicateGold(String),
    OrphanGold(String),
    EmptySteps(String),
    UnknownTool { task_id: String, agent: Domain, tool: String },
    OutOfBounds { task_id: String, key: DataPointKey },
}

impl std::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationError::EmptyTaskId => write!(f, "task with empty id"),
            ValidationError::DuplicateTask(id) => write!(f, "{id}: duplicate task id"),
            ValidationError::EmptyText(id) => write!(f, "{id}: empty prompt text"),
            ValidationError::MissingGold(id) => write!(f, "{id}: no gold solution"),
            ValidationError::DuplicateGold(id) => write!(f, "{id}: more than one gold solution"),
            ValidationError::OrphanGold(id) => write!(f, "{id}: gold solution without a task"),
            ValidationError::EmptySteps(id) => write!(f, "{id}: gold solution has no steps"),
            ValidationError::UnknownTool { task_id, agent, tool } => {
                write!(f, "{task_id}: unknown tool '{tool}' for agent {agent}")
            }
            ValidationError::OutOfBounds { task_id, key } => write!(
                f,
                "{task_id}: datapoint {} {} {} out of bounds",
                key.product, key.cell, key.date
            ),
        }
    }
}

/// Returns every problem found; an empty list means the dataset is usable.
pub fn validate_dataset(
    tasks: &[TaskPrompt],
    golds: &[GoldSolution],
    tools: &dyn ToolLookup,
    bounds: &dyn DataBounds,
) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut task_ids = BTreeSet::new();
    for t in tasks {
        if t.id.is_empty() {
            errors.push(ValidationError::EmptyTaskId);
            continue;
        }
        if !task_ids.insert(t.id.as_str()) {
            errors.push(ValidationError::DuplicateTask(t.id.clone()));
        }
        if t.text.trim().is_empty() {
            errors.push(ValidationError::EmptyText(t.id.clone()));
        }
    }

    let mut gold_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for g in golds {
        *gold_counts.entry(g.task_id.as_str()).or_default() += 1;
        if !task_ids.contains(g.task_id.as_str()) {
            errors.push(ValidationError::OrphanGold(g.task_id.clone()));
        }
        if g.steps.is_empty() {
            errors.push(ValidationError::EmptySteps(g.task_id.clone()));
        }
        for s in &g.steps {
            if !tools.has_tool(s.agent_name, &s.tool_name) {
                errors.push(ValidationError::UnknownTool {
                    task_id: g.task_id.clone(),
                    agent: s.agent_name,
                    tool: s.tool_name.clone(),
                });
            }
        }
        for k in &g.gold_datapoints {
            if !bounds.contains(k) {
                errors.push(ValidationError::OutOfBounds { task_id: g.task_id.clone(), key: *k });
            }
        }
    }
    for id in &task_ids {
        match gold_counts.get(id) {
            None => errors.push(ValidationError::MissingGold(id.to_string())),
            Some(n) if *n > 1 => errors.push(ValidationError::DuplicateGold(id.to_string())),
            _ => {}
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Cell, GoldStep, Period, Product, RegionRef};

    struct Fixture;

    impl ToolLookup for Fixture {
        fn has_tool(&self, agent: Domain, tool: &str) -> bool {
            matches!((agent, tool), (Domain::Database, "load_product") | (Domain::Map, "map_add_layer"))
        }
    }

    impl DataBounds for Fixture {
        fn contains(&self, key: &DataPointKey) -> bool {
            key.cell.row < 8 && key.cell.col < 8
        }
    }

    fn task(id: &str) -> TaskPrompt {
        TaskPrompt {
            id: id.into(),
            domain: Domain::Database,
            text: "Load NDVI for Brisbane".into(),
            region: RegionRef::new("brisbane"),
            date_range: None,
        }
    }

    fn gold(id: &str, tool: &str, row: u32) -> GoldSolution {
        GoldSolution {
            task_id: id.into(),
            steps: vec![GoldStep {
                agent_name: Domain::Database,
                tool_name: tool.into(),
                canonical_args: Default::default(),
            }],
            gold_datapoints: [DataPointKey::new(Product::Ndvi, Cell::new(row, 0), Period::month(2024, 1))]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn well_formed_fixture_has_no_errors() {
        let tasks = vec![task("t1"), task("t2")];
        let golds = vec![gold("t1", "load_product", 1), gold("t2", "load_product", 2)];
        assert!(validate_dataset(&tasks, &golds, &Fixture, &Fixture).is_empty());
    }

    #[test]
    fn unknown_tool_is_named() {
        let tasks = vec![task("t1")];
        let golds = vec![gold("t1", "frob", 1)];
        let errs = validate_dataset(&tasks, &golds, &Fixture, &Fixture);
        assert_eq!(errs.len(), 1);
        let msg = errs[0].to_string();
        assert!(msg.contains("t1") && msg.contains("frob"), "{msg}");
    }

    #[test]
    fn row_beyond_grid_is_out_of_bounds() {
        let tasks = vec![task("t1")];
        let golds = vec![gold("t1", "load_product", 8)];
        let errs = validate_dataset(&tasks, &golds, &Fixture, &Fixture);
        assert_eq!(errs.len(), 1);
        assert!(matches!(errs[0], ValidationError::OutOfBounds { .. }));
    }

    #[test]
    fn missing_and_duplicate_golds() {
        let tasks = vec![task("t1"), task("t2")];
        let golds = vec![gold("t1", "load_product", 1), gold("t1", "load_product", 1)];
        let errs = validate_dataset(&tasks, &golds, &Fixture, &Fixture);
        assert!(errs.contains(&ValidationError::DuplicateGold("t1".into())));
        assert!(errs.contains(&ValidationError::MissingGold("t2".into())));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tasks.jsonl");
        let tasks = vec![task("a"), task("b")];
        write_jsonl(&p, &tasks).unwrap();
        let back: Vec<TaskPrompt> = read_jsonl(&p).unwrap();
        assert_eq!(back, tasks);
    }
}
