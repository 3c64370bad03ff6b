//! Engine configuration and the benchmark runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::http::HttpBackend;
use crate::backend::scripted::{Perturbation, ScriptedBackend, ScriptedBehavior};
use crate::backend::{BackendConfig, BackendError, BackendKind, ChatBackend};
use crate::dataset::IoError;
use crate::evaluator::{aggregate, render_csv, render_markdown, score_task, vision_scores, BenchmarkReport, EvalError, TaskScore};
use crate::events::RunEvent;
use crate::orchestrator::{run_task, EngineRefs, StrategyConfig};
use crate::registry::retrieval::{TsStore, WmStore};
use crate::registry::{filler_counts_for_total, ToolRegistry, DEFAULT_TOTAL_TOOLS};
use crate::sandbox::vision::ConfusionModel;
use crate::sandbox::{Sandbox, SandboxConfig, SandboxSession};
use crate::taskgen::{compile_behavior, BehaviorMode, TaskGenError};
use crate::types::{Domain, ExecutionTrace, GoldSolution, GoldStep, StrategyKind, TaskPrompt};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn io_err(path: &Path, source: std::io::Error) -> EngineError {
    EngineError::Io(IoError::Io { path: path.display().to_string(), source })
}

/// How the scripted backend plays each benchmark task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    #[default]
    Faithful,
    InjectedFailure,
    DropLastStep,
}

impl ScriptMode {
    pub fn behavior(self) -> BehaviorMode {
        match self {
            ScriptMode::Faithful => BehaviorMode::Faithful,
            ScriptMode::InjectedFailure => BehaviorMode::InjectedFailure,
            ScriptMode::DropLastStep => BehaviorMode::Perturbed(Perturbation::DropLastStep),
        }
    }
}

impl std::str::FromStr for ScriptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "faithful" => Ok(ScriptMode::Faithful),
            "injected_failure" | "inject" => Ok(ScriptMode::InjectedFailure),
            "drop_last_step" | "drop_last" => Ok(ScriptMode::DropLastStep),
            other => Err(format!("unknown script mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub backend: BackendConfig,
    pub strategy: StrategyConfig,
    /// Root holding `seed-<seed>/` dataset directories.
    pub dataset_dir: PathBuf,
    /// Dataset generation seed.
    pub seed: u64,
    pub sandbox_seed: u64,
    /// Total registered tools; filler is split evenly over the toolkits.
    pub total_tools: usize,
    /// Per-toolkit filler counts; overrides `total_tools` when set.
    pub filler_counts: Option<BTreeMap<Domain, usize>>,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    pub script_mode: ScriptMode,
    /// Quality of the detection and land-cover stubs.
    pub vision: ConfusionModel,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            backend: BackendConfig::default(),
            strategy: StrategyConfig::default(),
            dataset_dir: PathBuf::from("datasets"),
            seed: 7,
            sandbox_seed: 7,
            total_tools: DEFAULT_TOTAL_TOOLS,
            filler_counts: None,
            parallelism: 4,
            output_dir: PathBuf::from("runs"),
            script_mode: ScriptMode::Faithful,
            vision: ConfusionModel::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let c: EngineConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, EngineError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        EngineConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.parallelism == 0 {
            return Err(EngineError::Config("parallelism must be at least 1".into()));
        }
        self.backend.validate()?;
        self.strategy.validate().map_err(EngineError::Config)?;
        Ok(())
    }

    pub fn dataset_path(&self) -> PathBuf {
        crate::taskgen::dataset_dir(&self.dataset_dir, self.seed)
    }

    /// Checked before a benchmark: the dataset must already exist.
    pub fn require_dataset(&self) -> Result<PathBuf, EngineError> {
        let p = self.dataset_path();
        if !p.join("manifest.json").is_file() {
            return Err(EngineError::Config(format!("dataset not found at {} (run gen first)", p.display())));
        }
        Ok(p)
    }

    pub fn filler(&self) -> BTreeMap<Domain, usize> {
        self.filler_counts.clone().unwrap_or_else(|| filler_counts_for_total(self.total_tools))
    }
}

/// Read-only state shared by all runs.
pub struct Engine {
    pub config: EngineConfig,
    pub sandbox: Arc<Sandbox>,
    pub registry: ToolRegistry,
    pub ts: Option<TsStore>,
    pub wm: Option<WmStore>,
    live: Option<Arc<dyn ChatBackend>>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let sandbox = Arc::new(Sandbox::new(SandboxConfig { seed: config.sandbox_seed, vision: config.vision, ..SandboxConfig::default() }));
        let registry = ToolRegistry::standard(&Domain::ALL, &config.filler(), config.sandbox_seed);
        let live: Option<Arc<dyn ChatBackend>> = match config.backend.kind {
            BackendKind::Scripted => None,
            BackendKind::Http => Some(Arc::new(HttpBackend::new(config.backend.clone())?)),
        };
        Ok(Engine { config, sandbox, registry, ts: None, wm: None, live })
    }

    pub fn with_memories(mut self, ts: TsStore, wm: WmStore) -> Self {
        self.ts = Some(ts);
        self.wm = Some(wm);
        self
    }

    /// Keeps only the first `n` toolkits in registration order.
    pub fn restrict_domains(&mut self, n: usize) {
        let keep: Vec<Domain> = Domain::TOOLKIT_ORDER.iter().take(n).copied().collect();
        self.registry = self.registry.restricted(&keep);
    }

    pub fn is_scripted(&self) -> bool {
        self.live.is_none()
    }

    /// One run in a fresh session. With the scripted backend the behavior is
    /// compiled from `gold`; without gold it falls back to the default reply.
    pub fn run_one(
        &self,
        task: &TaskPrompt,
        gold: Option<&[GoldStep]>,
        strategy: &StrategyConfig,
        mode: ScriptMode,
        emit: &dyn Fn(&RunEvent),
    ) -> (ExecutionTrace, SandboxSession) {
        let mut session = SandboxSession::new(self.sandbox.clone());
        let trace = self.run_in(task, gold, strategy, mode, &mut session, emit);
        (trace, session)
    }

    /// Like `run_one` but in a caller-owned session (chat sessions keep
    /// their map across prompts).
    pub fn run_in(
        &self,
        task: &TaskPrompt,
        gold: Option<&[GoldStep]>,
        strategy: &StrategyConfig,
        mode: ScriptMode,
        session: &mut SandboxSession,
        emit: &dyn Fn(&RunEvent),
    ) -> ExecutionTrace {
        let scripted;
        let backend: &dyn ChatBackend = match &self.live {
            Some(b) => b.as_ref(),
            None => {
                let behavior = match gold {
                    Some(steps) => compile_behavior(&task.text, steps, &mode.behavior()),
                    None => ScriptedBehavior::default(),
                };
                scripted = ScriptedBackend::new(self.config.backend.clone(), behavior);
                &scripted
            }
        };
        let refs = EngineRefs {
            backend,
            registry: &self.registry,
            ts: if strategy.ts_enabled { self.ts.as_ref() } else { None },
            wm: if strategy.wm_enabled { self.wm.as_ref() } else { None },
        };
        run_task(task, strategy, refs, session, emit)
    }
}

/// One report row: a strategy with its memory flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub kind: StrategyKind,
    pub ts: bool,
    pub wm: bool,
}

impl Variant {
    pub fn new(kind: StrategyKind, ts: bool, wm: bool) -> Self {
        // The single-agent baseline uses neither memory.
        if kind == StrategyKind::SingleAgent {
            return Variant { kind, ts: false, wm: false };
        }
        Variant { kind, ts, wm }
    }

    pub fn label(&self) -> String {
        let mut s = self.kind.to_string();
        if self.ts {
            s += "-ts";
        }
        if self.wm {
            s += "-wm";
        }
        s
    }

    pub fn parse_label(label: &str) -> Option<Variant> {
        let mut parts: Vec<&str> = label.split('-').collect();
        let wm = parts.last() == Some(&"wm");
        if wm {
            parts.pop();
        }
        let ts = parts.last() == Some(&"ts");
        if ts {
            parts.pop();
        }
        let kind = parts.join("-").parse().ok()?;
        Some(Variant { kind, ts, wm })
    }

    pub fn strategy(&self, base: &StrategyConfig) -> StrategyConfig {
        StrategyConfig { kind: self.kind, ts_enabled: self.ts, wm_enabled: self.wm, ..base.clone() }
    }
}

pub struct BenchOutcome {
    pub variant: Variant,
    pub traces: Vec<ExecutionTrace>,
    pub scores: Vec<TaskScore>,
    pub report: BenchmarkReport,
}

/// True when every agent in the gold solution has a registered toolkit.
pub fn runnable(gold: &GoldSolution, registry: &ToolRegistry) -> bool {
    let have: BTreeSet<Domain> = registry.domains().into_iter().collect();
    gold.steps.iter().all(|s| have.contains(&s.agent_name))
}

pub fn report_for(
    variant: Variant,
    traces: &[ExecutionTrace],
    golds: &BTreeMap<&str, &GoldSolution>,
    sandbox: &Sandbox,
) -> Result<(Vec<TaskScore>, BenchmarkReport), EngineError> {
    let mut scores = Vec::new();
    let mut pairs = Vec::new();
    for t in traces {
        if let Some(g) = golds.get(t.task_id.as_str()) {
            scores.push(score_task(t, g));
            pairs.push((t, *g));
        }
    }
    let vision = vision_scores(&pairs, &sandbox.metadata());
    let has_vision = vision.lcc_total > 0 || vision.tp + vision.fp + vision.fn_ > 0;
    let report = aggregate(&scores, variant.kind, variant.ts, variant.wm, has_vision.then_some(&vision))?;
    Ok((scores, report))
}

/// Runs every (variant × task) with bounded parallelism. Results keep task
/// order, so reports and trace files do not depend on scheduling.
pub fn run_bench(
    engine: &Engine,
    tasks: &[TaskPrompt],
    golds: &[GoldSolution],
    variants: &[Variant],
) -> Result<Vec<BenchOutcome>, EngineError> {
    let by_id: BTreeMap<&str, &GoldSolution> = golds.iter().map(|g| (g.task_id.as_str(), g)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config.parallelism)
        .build()
        .map_err(|e| EngineError::Config(e.to_string()))?;
    let mut out = Vec::new();
    for v in variants {
        let strategy = v.strategy(&engine.config.strategy);
        let traces: Vec<ExecutionTrace> = pool.install(|| {
            tasks
                .par_iter()
                .map(|t| {
                    let gold = by_id.get(t.id.as_str()).map(|g| g.steps.as_slice());
                    engine.run_one(t, gold, &strategy, engine.config.script_mode, &crate::events::ignore).0
                })
                .collect()
        });
        let (scores, report) = report_for(*v, &traces, &by_id, &engine.sandbox)?;
        out.push(BenchOutcome { variant: *v, traces, scores, report });
    }
    Ok(out)
}

/// Writes `traces/<variant>/<task_id>.json`, `report.md` and `report.csv`.
pub fn write_bench(dir: &Path, outcomes: &[BenchOutcome]) -> Result<(), EngineError> {
    for o in outcomes {
        let d = dir.join("traces").join(o.variant.label());
        std::fs::create_dir_all(&d).map_err(|e| io_err(&d, e))?;
        for t in &o.traces {
            let p = d.join(format!("{}.json", t.task_id));
            let text = serde_json::to_string_pretty(t).expect("trace serializes");
            std::fs::write(&p, text + "\n").map_err(|e| io_err(&p, e))?;
        }
    }
    let reports: Vec<BenchmarkReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    write_reports(dir, &reports)
}

pub fn write_reports(dir: &Path, reports: &[BenchmarkReport]) -> Result<(), EngineError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let md = dir.join("report.md");
    std::fs::write(&md, render_markdown(reports)).map_err(|e| io_err(&md, e))?;
    let csv = dir.join("report.csv");
    std::fs::write(&csv, render_csv(reports)).map_err(|e| io_err(&csv, e))?;
    Ok(())
}

/// Re-scores stored traces; one report per variant directory, in label order.
pub fn evaluate_traces(dir: &Path, golds: &[GoldSolution], sandbox: &Sandbox) -> Result<Vec<BenchmarkReport>, EngineError> {
    let by_id: BTreeMap<&str, &GoldSolution> = golds.iter().map(|g| (g.task_id.as_str(), g)).collect();
    let root = dir.join("traces");
    let mut labels: Vec<String> = std::fs::read_dir(&root)
        .map_err(|e| io_err(&root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    labels.sort();
    let mut out = Vec::new();
    for label in labels {
        let Some(v) = Variant::parse_label(&label) else {
            continue;
        };
        let d = root.join(&label);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| io_err(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut traces = Vec::new();
        for f in files {
            let text = std::fs::read_to_string(&f).map_err(|e| io_err(&f, e))?;
            let t: ExecutionTrace = serde_json::from_str(&text)
                .map_err(|e| EngineError::Io(IoError::Json { path: f.display().to_string(), line: 0, source: e }))?;
            traces.push(t);
        }
        out.push(report_for(v, &traces, &by_id, sandbox)?.1);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_validation() {
        let c = EngineConfig::default();
        let back = EngineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial = EngineConfig::from_toml("seed = 9\nparallelism = 2\n[strategy]\nkind = \"ledger_loop\"\n").unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.strategy.kind, StrategyKind::LedgerLoop);
        assert!(EngineConfig::from_toml("parallelism = 0").is_err());
        assert!(EngineConfig::from_toml("[backend]\nkind = \"http\"\n").is_err());
    }

    #[test]
    fn variant_labels() {
        for kind in StrategyKind::ALL {
            for (ts, wm) in [(false, false), (true, false), (false, true), (true, true)] {
                let v = Variant::new(kind, ts, wm);
                assert_eq!(Variant::parse_label(&v.label()), Some(v));
            }
        }
        assert_eq!(Variant::new(StrategyKind::SingleAgent, true, true).label(), "single_agent");
    }

    #[test]
    fn restricting_domains_keeps_prefix() {
        let mut e = Engine::new(EngineConfig::default()).unwrap();
        assert_eq!(e.registry.len(), DEFAULT_TOTAL_TOOLS);
        e.restrict_domains(3);
        assert_eq!(e.registry.domains(), vec![Domain::Database, Domain::DataOps, Domain::Map]);
    }
}
