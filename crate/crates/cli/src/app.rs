//! Engine setup and prompt planning shared by the commands and the service.

use std::fmt;
use std::path::Path;

use geosquad::engine::{Engine, EngineConfig, EngineError};
use geosquad::orchestrator::StrategyConfig;
use geosquad::taskgen::{builtin_templates, compile_memories, generate_dataset, interpret, load_memories, TaskGenError};
use geosquad::types::{Domain, GoldStep, RegionRef, StrategyKind, TaskPrompt};

/// Failure with the process exit code it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppError {
    pub code: i32,
    pub message: String,
}

impl AppError {
    pub fn usage(message: impl Into<String>) -> Self {
        AppError { code: 2, message: message.into() }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        AppError { code: 1, message: message.into() }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for AppError {}

impl From<EngineError> for AppError {
    fn from(e: EngineError) -> Self {
        AppError::failed(e.to_string())
    }
}

impl From<TaskGenError> for AppError {
    fn from(e: TaskGenError) -> Self {
        let code = if matches!(e, TaskGenError::TemplateGap(_)) { 2 } else { 1 };
        AppError { code, message: e.to_string() }
    }
}

pub fn load_config(path: Option<&Path>) -> Result<EngineConfig, AppError> {
    match path {
        Some(p) => Ok(EngineConfig::load(p)?),
        None => Ok(EngineConfig::default()),
    }
}

/// Engine with TS/WM memories: read from the dataset when it exists,
/// otherwise compiled from freshly generated exemplars.
pub fn engine_with_memories(config: EngineConfig) -> Result<Engine, AppError> {
    let dir = config.dataset_path();
    let seed = config.seed;
    let engine = Engine::new(config)?;
    let (ts, wm) = if dir.join("ts_store.jsonl").is_file() {
        load_memories(&dir)?
    } else {
        let ds = generate_dataset(&builtin_templates(), &engine.sandbox, seed, 0)?;
        compile_memories(&ds.exemplars, &ds.exemplar_golds)
    };
    Ok(engine.with_memories(ts, wm))
}

/// A chat prompt resolved into a task, plus the playback script when the
/// prompt matches a known task shape.
#[derive(Debug, Clone)]
pub struct ChatPlan {
    pub task: TaskPrompt,
    pub steps: Option<Vec<GoldStep>>,
    pub template: Option<&'static str>,
}

pub fn plan_chat(id: &str, text: &str) -> ChatPlan {
    match interpret(id, text) {
        Some(i) => ChatPlan { task: i.task, steps: Some(i.steps), template: Some(i.template) },
        None => ChatPlan {
            task: TaskPrompt {
                id: id.to_string(),
                domain: Domain::Database,
                text: text.to_string(),
                region: RegionRef::new(""),
                date_range: None,
            },
            steps: None,
            template: None,
        },
    }
}

/// Chat always runs the hybrid strategy with the configured bounds.
pub fn chat_strategy(config: &EngineConfig) -> StrategyConfig {
    StrategyConfig { kind: StrategyKind::Hybrid, ..config.strategy.clone() }
}
