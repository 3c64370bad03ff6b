//! Batch subcommands. Each returns the text to print; the exit code travels
//! in `AppError`.

use std::fmt::Write as _;
use std::path::PathBuf;

use geosquad::engine::{run_bench, runnable, write_bench, Engine, EngineConfig, ScriptMode, Variant};
use geosquad::evaluator::render_markdown;
use geosquad::sandbox::map::MapState;
use geosquad::taskgen::{
    builtin_templates, compile_memories, generate_dataset, load_dataset, load_memories, write_dataset, FULL_PER_AGENT,
};
use geosquad::types::{CallStatus, ExecutionTrace, StrategyKind, Terminal};

use crate::app::{chat_strategy, engine_with_memories, plan_chat, AppError};

#[derive(Debug, Clone, Default)]
pub struct GenArgs {
    pub seed: Option<u64>,
    pub per_agent: Option<usize>,
    pub full: bool,
    /// Template codes left out of generation.
    pub skip_templates: Vec<String>,
}

pub fn cmd_gen(mut config: EngineConfig, args: &GenArgs) -> Result<String, AppError> {
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let per_agent = if args.full { FULL_PER_AGENT } else { args.per_agent.unwrap_or(geosquad::taskgen::DEFAULT_PER_AGENT) };
    let templates: Vec<_> =
        builtin_templates().into_iter().filter(|t| !args.skip_templates.iter().any(|c| c == t.code)).collect();
    let engine = Engine::new(config)?;
    let ds = generate_dataset(&templates, &engine.sandbox, engine.config.seed, per_agent)?;
    let (ts, wm) = compile_memories(&ds.exemplars, &ds.exemplar_golds);
    let dir = engine.config.dataset_path();
    write_dataset(&dir, &ds, &ts, &wm)?;
    let mut out = format!("dataset {}\n", dir.display());
    let _ = writeln!(out, "{:<12} {:>9} {:>9}", "agent", "exemplars", "tasks");
    for (agent, c) in &ds.manifest.counts {
        let _ = writeln!(out, "{:<12} {:>9} {:>9}", agent.agent_name(), c.exemplar, c.benchmark);
    }
    let _ = writeln!(
        out,
        "total: {} tasks, {} exemplars, {} TS / {} WM entries",
        ds.manifest.total_benchmark(),
        ds.manifest.total_exemplars(),
        ts.len(),
        wm.len()
    );
    let _ = writeln!(out, "fixture {}", ds.manifest.fixture_hash);
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct BenchArgs {
    pub seed: Option<u64>,
    /// Variant labels such as `hybrid`, `hybrid-ts-wm` or `all`. A bare
    /// strategy name takes its memory flags from the config.
    pub strategies: Vec<String>,
    pub domains: Option<usize>,
    pub budget: Option<u32>,
    pub allow_failures: bool,
    pub script_mode: Option<ScriptMode>,
    pub out: Option<PathBuf>,
}

pub fn parse_variants(items: &[String], config: &EngineConfig) -> Result<Vec<Variant>, AppError> {
    let bare = |kind: StrategyKind| Variant::new(kind, config.strategy.ts_enabled, config.strategy.wm_enabled);
    if items.is_empty() {
        return Ok(vec![bare(config.strategy.kind)]);
    }
    let mut out = Vec::new();
    for item in items.iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            out.extend(StrategyKind::ALL.map(bare));
        } else if let Ok(kind) = item.parse::<StrategyKind>() {
            out.push(bare(kind));
        } else {
            out.push(Variant::parse_label(item).ok_or_else(|| AppError::usage(format!("unknown strategy '{item}'")))?);
        }
    }
    Ok(out)
}

pub fn cmd_bench(mut config: EngineConfig, args: &BenchArgs) -> Result<String, AppError> {
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(b) = args.budget {
        config.backend.context_budget = b;
    }
    if let Some(m) = args.script_mode {
        config.script_mode = m;
    }
    let variants = parse_variants(&args.strategies, &config)?;
    let dir = config.require_dataset()?;
    let out_dir = args.out.clone().unwrap_or_else(|| config.output_dir.join(format!("bench-seed-{}", config.seed)));
    let ds = load_dataset(&dir)?;
    let (ts, wm) = load_memories(&dir)?;
    let mut engine = Engine::new(config)?.with_memories(ts, wm);
    if let Some(n) = args.domains {
        if n == 0 || n > 8 {
            return Err(AppError::usage("--domains takes a value from 1 to 8"));
        }
        engine.restrict_domains(n);
    }
    let (tasks, golds): (Vec<_>, Vec<_>) = ds
        .tasks
        .iter()
        .zip(&ds.golds)
        .filter(|(_, g)| runnable(g, &engine.registry))
        .map(|(t, g)| (t.clone(), g.clone()))
        .unzip();
    if tasks.is_empty() {
        return Err(AppError::failed("no task is runnable with the registered toolkits"));
    }
    let outcomes = run_bench(&engine, &tasks, &golds, &variants)?;
    write_bench(&out_dir, &outcomes)?;
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let mut text = render_markdown(&reports);
    let _ = writeln!(
        text,
        "\n{} tasks x {} variants, {} tools registered; reports in {}",
        tasks.len(),
        variants.len(),
        engine.registry.len(),
        out_dir.display()
    );
    let overflows: usize = reports.iter().map(|r| r.context_overflows).sum();
    if overflows > 0 {
        let _ = writeln!(text, "{overflows} runs ended in context_overflow");
        if !args.allow_failures {
            return Err(AppError::failed(text));
        }
    }
    Ok(text)
}

/// Chat output: the answer first, then what the tools found and the map.
pub fn render_chat(trace: &ExecutionTrace, map: &MapState) -> String {
    let answer = trace.final_answer.trim();
    let mut out = if answer.is_empty() {
        format!("No answer: the run ended with {}.\n", trace.terminal)
    } else {
        format!("{answer}\n")
    };
    let _ = writeln!(out, "\nterminal: {}", trace.terminal);
    let found: Vec<_> = trace
        .executed_steps
        .iter()
        .filter(|c| c.result_status == CallStatus::Ok && !c.tool.starts_with("map_") && c.tool != "load_product")
        .collect();
    if !found.is_empty() {
        let _ = writeln!(out, "results:");
        for c in found {
            let _ = writeln!(out, "  {}.{}: {}", c.agent.agent_name(), c.tool, c.result_payload);
        }
    }
    let failed: Vec<_> = trace.executed_steps.iter().filter(|c| c.result_status != CallStatus::Ok).collect();
    for c in failed {
        let _ = writeln!(out, "  failed {}.{}: {}", c.agent.agent_name(), c.tool, c.result_payload);
    }
    let _ = writeln!(out, "map layers: {}", map.layers.len());
    for (i, l) in map.summary().iter().enumerate() {
        let _ = writeln!(out, "  {}. {l}", i + 1);
    }
    for a in &map.annotations {
        let _ = writeln!(out, "  {:?} '{}' ({} cells)", a.kind, a.label, a.cells.len());
    }
    if let Some(v) = trace.verdicts.last().filter(|v| !v.complete) {
        let _ = writeln!(out, "incomplete: {}", v.missing);
    }
    let _ = writeln!(out, "tokens: {}", trace.token_usage.total_tokens);
    out
}

#[derive(Debug, Clone, Default)]
pub struct ChatArgs {
    pub prompt: String,
    pub budget: Option<u32>,
}

/// One hybrid run. The trace is written under `<output_dir>/chat/`.
pub fn cmd_chat(mut config: EngineConfig, args: &ChatArgs) -> Result<String, AppError> {
    if args.prompt.trim().is_empty() {
        return Err(AppError::usage("usage: geosquad chat <PROMPT> (prompt must not be empty)"));
    }
    if let Some(b) = args.budget {
        config.backend.context_budget = b;
    }
    let engine = engine_with_memories(config)?;
    let plan = plan_chat("chat", &args.prompt);
    let strategy = chat_strategy(&engine.config);
    let (trace, session) =
        engine.run_one(&plan.task, plan.steps.as_deref(), &strategy, ScriptMode::Faithful, &geosquad::events::ignore);
    let dir = engine.config.output_dir.join("chat");
    std::fs::create_dir_all(&dir).map_err(|e| AppError::failed(format!("{}: {e}", dir.display())))?;
    let n = std::fs::read_dir(&dir).map(|d| d.count()).unwrap_or(0);
    let path = dir.join(format!("chat-{:04}.json", n + 1));
    let json = serde_json::to_string_pretty(&trace).map_err(|e| AppError::failed(e.to_string()))?;
    std::fs::write(&path, json + "\n").map_err(|e| AppError::failed(format!("{}: {e}", path.display())))?;
    let mut out = render_chat(&trace, session.map());
    let _ = writeln!(out, "trace: {}", path.display());
    if trace.terminal == Terminal::ContextOverflow {
        return Err(AppError::failed(out));
    }
    Ok(out)
}
