//! The four orchestration strategies over shared agents and tools.

pub mod schedule;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, digest, status_key, AgentEnv, AgentResult, AgentSpec};
use crate::backend::{complete, BackendError, BackendKind, ChatBackend, ChatMessage};
use crate::events::RunEvent;
use crate::prompts;
use crate::registry::retrieval::{TS_K, WM_K};
use crate::registry::{format_guidance, ToolRegistry, TsStore, WmStore};
use crate::sandbox::SandboxSession;
use crate::types::{
    AgentOutcome, AgentStatus, CompletionVerdict, Domain, ExecutionTrace, Schedule, StrategyKind, SubTask, TaskPrompt,
    Terminal, TokenUsage, ToolCall,
};

pub use schedule::{parse_schedule, ScheduleParseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    pub max_revisions: u32,
    pub max_ledger_rounds: u32,
    pub wm_enabled: bool,
    pub ts_enabled: bool,
    pub max_tool_rounds: usize,
    /// Tool rounds for the single-agent copilot, which does a whole task alone.
    pub single_agent_rounds: usize,
    pub ts_k: usize,
    pub wm_k: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            kind: StrategyKind::Hybrid,
            max_revisions: 3,
            max_ledger_rounds: 20,
            wm_enabled: true,
            ts_enabled: true,
            max_tool_rounds: agents::DEFAULT_MAX_TOOL_ROUNDS,
            single_agent_rounds: 24,
            ts_k: TS_K,
            wm_k: WM_K,
        }
    }
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        StrategyConfig { kind, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let bounds = [
            ("max_revisions", self.max_revisions as usize),
            ("max_ledger_rounds", self.max_ledger_rounds as usize),
            ("max_tool_rounds", self.max_tool_rounds),
            ("single_agent_rounds", self.single_agent_rounds),
            ("ts_k", self.ts_k),
            ("wm_k", self.wm_k),
        ];
        match bounds.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("{name} must be positive")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrchestratorError {
    #[error("UnparseableSchedule: {0}")]
    UnparseableSchedule(String),
    #[error("MaxRevisions: revision limit {0} reached")]
    MaxRevisions(u32),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Shared, read-only engine pieces for one run.
#[derive(Clone, Copy)]
pub struct EngineRefs<'a> {
    pub backend: &'a dyn ChatBackend,
    pub registry: &'a ToolRegistry,
    pub ts: Option<&'a TsStore>,
    pub wm: Option<&'a WmStore>,
}

/// Mutable accounting for one run plus the event sink.
pub struct RunCtx<'a> {
    pub refs: EngineRefs<'a>,
    pub cfg: &'a StrategyConfig,
    pub emit: &'a dyn Fn(&RunEvent),
    pub usage: TokenUsage,
    pub calls: Vec<ToolCall>,
    pub outcomes: Vec<AgentOutcome>,
    pub schedules: Vec<Schedule>,
    pub verdicts: Vec<CompletionVerdict>,
}

impl<'a> RunCtx<'a> {
    pub fn new(refs: EngineRefs<'a>, cfg: &'a StrategyConfig, emit: &'a dyn Fn(&RunEvent)) -> Self {
        RunCtx {
            refs,
            cfg,
            emit,
            usage: TokenUsage::default(),
            calls: Vec::new(),
            outcomes: Vec::new(),
            schedules: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    fn roster(&self) -> Vec<Domain> {
        self.refs.registry.domains()
    }

    fn model(&mut self, messages: &[ChatMessage]) -> Result<ChatMessage, BackendError> {
        let c = complete(self.refs.backend, messages, &[])?;
        self.usage.record(c.usage, c.reported);
        Ok(c.message)
    }

    fn push_schedule(&mut self, s: &Schedule) {
        (self.emit)(&RunEvent::Schedule { revision: s.revision, program: s.to_program() });
        self.schedules.push(s.clone());
    }

    fn orchestrator_system(&self, task: &TaskPrompt) -> String {
        let guidance = match (self.cfg.wm_enabled, self.refs.wm) {
            (true, Some(wm)) => wm.retrieve(&task.text, self.cfg.wm_k).map(|h| format_guidance(&[], &h)).unwrap_or_default(),
            _ => String::new(),
        };
        prompts::orchestrator_system(&self.roster(), &guidance)
    }

    fn agent_env(&self) -> AgentEnv<'a> {
        AgentEnv {
            backend: self.refs.backend,
            registry: self.refs.registry,
            ts: if self.cfg.ts_enabled { self.refs.ts } else { None },
            ts_k: self.cfg.ts_k,
        }
    }
}

/// Asks the planner for a schedule, with one format reminder on failure.
pub fn plan(ctx: &mut RunCtx<'_>, task: &TaskPrompt) -> Result<Schedule, OrchestratorError> {
    let roster = ctx.roster();
    if roster.is_empty() {
        return Err(OrchestratorError::Contract("empty agent roster".into()));
    }
    let mut messages = vec![ChatMessage::system(ctx.orchestrator_system(task)), ChatMessage::user(prompts::plan_request(&task.text))];
    let mut last_err = String::new();
    for attempt in 0..2 {
        if attempt == 1 {
            messages.push(ChatMessage::user(prompts::plan_reminder(&task.text)));
        }
        let reply = ctx.model(&messages)?;
        match parse_schedule(&reply.content).and_then(|s| validate_plan(s, &roster)) {
            Ok(subtasks) => {
                let s = Schedule { subtasks, revision: 0 };
                ctx.push_schedule(&s);
                return Ok(s);
            }
            Err(ScheduleParseError::Unparseable(m)) => last_err = m,
        }
        messages.push(reply);
    }
    Err(OrchestratorError::UnparseableSchedule(last_err))
}

fn validate_plan(s: Vec<SubTask>, roster: &[Domain]) -> Result<Vec<SubTask>, ScheduleParseError> {
    if s.is_empty() {
        return Err(ScheduleParseError::Unparseable("empty schedule".into()));
    }
    if let Some(t) = s.iter().find(|t| !roster.contains(&t.agent)) {
        return Err(ScheduleParseError::Unparseable(format!("agent {} is not available", t.agent)));
    }
    Ok(s)
}

/// Runs one subtask and folds its accounting into the run.
pub fn run_step(
    ctx: &mut RunCtx<'_>,
    sub: &SubTask,
    context: &str,
    revision: u32,
    session: &mut SandboxSession,
) -> Result<AgentResult, BackendError> {
    (ctx.emit)(&RunEvent::AgentStart { agent: sub.agent, subprompt: sub.subprompt.clone() });
    let spec = AgentSpec { agent: sub.agent, max_tool_rounds: ctx.cfg.max_tool_rounds };
    let env = ctx.agent_env();
    let r = agents::run_subtask(&spec, &sub.subprompt, context, &env, session, ctx.emit)?;
    ctx.usage.absorb(&r.token_usage);
    ctx.calls.extend(r.tool_calls.iter().cloned());
    ctx.outcomes.push(r.outcome(revision, &sub.subprompt));
    (ctx.emit)(&RunEvent::AgentDone { agent: sub.agent, status: r.status, summary: r.summary.clone() });
    Ok(r)
}

/// Executes `schedule` from index `from`, halting after the first result that
/// is not done. `context` is the digest handed to the first executed step.
pub fn execute_schedule(
    ctx: &mut RunCtx<'_>,
    schedule: &Schedule,
    from: usize,
    context: &str,
    session: &mut SandboxSession,
) -> Result<Vec<AgentResult>, BackendError> {
    let mut out = Vec::new();
    let mut ctx_text = context.to_string();
    for sub in schedule.subtasks.iter().skip(from) {
        let r = run_step(ctx, sub, &ctx_text, schedule.revision, session)?;
        let halt = r.status != AgentStatus::Done;
        ctx_text = append_digest(&ctx_text, &r);
        out.push(r);
        if halt {
            break;
        }
    }
    Ok(out)
}

/// Hand-off text grows by one digest per completed step, so handles from
/// earlier steps stay visible to later agents.
fn append_digest(context: &str, r: &AgentResult) -> String {
    if context.is_empty() {
        digest(r)
    } else {
        format!("{context}\n{}", digest(r))
    }
}

pub fn wants_plot(task_text: &str) -> bool {
    let t = task_text.to_lowercase();
    ["plot", "on the map", "on a map", "map it", "show on map"].iter().any(|k| t.contains(k))
}

/// Deterministic completion rule: every result done, and a Map step done when
/// the task asks for plotting.
pub fn rule_verdict(task: &TaskPrompt, results: &[(SubTask, AgentResult)]) -> CompletionVerdict {
    if results.is_empty() {
        return CompletionVerdict::incomplete("no results", None);
    }
    if let Some((sub, r)) = results.iter().find(|(_, r)| r.status != AgentStatus::Done) {
        let directive = r.dependency_hint.as_ref().map(|h| {
            format!("Involve the {} agent before {}: {}", h.agent.agent_name(), sub.agent.agent_name(), h.reason)
        });
        return CompletionVerdict::incomplete(
            format!("{} {}: {}", sub.agent.agent_name(), status_key(r.status), r.summary),
            directive,
        );
    }
    let map_done = results.iter().any(|(s, r)| s.agent == Domain::Map && r.status == AgentStatus::Done);
    if wants_plot(&task.text) && !map_done {
        return CompletionVerdict::incomplete("map output", Some("Add a Map step to plot the result".into()));
    }
    CompletionVerdict::complete()
}

/// One verifier call. Scripted runs are judged by [`rule_verdict`]; live runs
/// by the reply, except that a result that is not done is never complete.
pub fn check_completion(
    ctx: &mut RunCtx<'_>,
    task: &TaskPrompt,
    results: &[(SubTask, AgentResult)],
) -> Result<CompletionVerdict, BackendError> {
    let lines: Vec<(Domain, String, String)> = results
        .iter()
        .map(|(s, r)| (s.agent, status_key(r.status).to_string(), r.summary.clone()))
        .collect();
    let messages =
        vec![ChatMessage::system(prompts::verifier_system()), ChatMessage::user(prompts::check_request(&task.text, &lines))];
    let reply = ctx.model(&messages)?;
    let rule = rule_verdict(task, results);
    let all_done = results.iter().all(|(_, r)| r.status == AgentStatus::Done);
    let verdict = if ctx.refs.backend.config().kind == BackendKind::Scripted || !all_done {
        rule
    } else {
        parse_verdict(&reply.content)
    };
    (ctx.emit)(&RunEvent::Verdict { complete: verdict.complete, missing: verdict.missing.clone() });
    ctx.verdicts.push(verdict.clone());
    Ok(verdict)
}

pub fn parse_verdict(text: &str) -> CompletionVerdict {
    let t = text.trim();
    let upper = t.to_uppercase();
    if upper.starts_with("INCOMPLETE") {
        let missing = t["INCOMPLETE".len()..].trim_start_matches(|c: char| c == ':' || c.is_whitespace());
        CompletionVerdict::incomplete(missing, None)
    } else if upper.starts_with("COMPLETE") {
        CompletionVerdict::complete()
    } else {
        CompletionVerdict::incomplete("unverifiable", None)
    }
}

/// Produces revision + 1. Steps before `done_prefix` are kept verbatim; the
/// planner rewrites the rest, and a dependency hint always lands directly
/// before the failing step.
pub fn revise(
    ctx: &mut RunCtx<'_>,
    task: &TaskPrompt,
    schedule: &Schedule,
    done_prefix: usize,
    failing: Option<&AgentResult>,
    verdict: &CompletionVerdict,
) -> Result<Schedule, OrchestratorError> {
    if verdict.complete {
        return Err(OrchestratorError::Contract("revise called with a complete verdict".into()));
    }
    if schedule.revision >= ctx.cfg.max_revisions {
        return Err(OrchestratorError::MaxRevisions(ctx.cfg.max_revisions));
    }
    let prefix: Vec<SubTask> = schedule.subtasks[..done_prefix].to_vec();
    let remaining = Schedule { subtasks: schedule.subtasks[done_prefix..].to_vec(), revision: schedule.revision };
    let completed: Vec<String> = prefix.iter().map(|s| format!("{}({})", s.agent.agent_name(), s.subprompt)).collect();
    let failed = remaining.subtasks.first().filter(|_| failing.is_some()).map(|s| format!("{}({})", s.agent.agent_name(), s.subprompt));
    let messages = vec![
        ChatMessage::system(ctx.orchestrator_system(task)),
        ChatMessage::user(prompts::revision_request(
            &task.text,
            &completed,
            failed.as_deref(),
            &verdict.missing,
            verdict.revision_directive.as_deref(),
            &remaining,
        )),
    ];
    let reply = ctx.model(&messages)?;
    let roster = ctx.roster();
    let hint = failing.and_then(|r| r.dependency_hint.clone());
    let mut rest = match parse_schedule(&reply.content) {
        Ok(s) if !s.is_empty() && s.iter().all(|t| roster.contains(&t.agent)) => s,
        _ => {
            let mut s = remaining.subtasks.clone();
            if failing.is_none() && wants_plot(&task.text) && !s.iter().any(|t| t.agent == Domain::Map) {
                s.push(SubTask::new(Domain::Map, format!("Plot the result of: {}", task.text)));
            }
            s
        }
    };
    if let Some(h) = hint {
        if rest.first().map(|t| t.agent) != Some(h.agent) {
            rest.insert(0, SubTask::new(h.agent, format!("Load the data needed ({}) for: {}", h.reason, task.text)));
        }
    }
    let mut subtasks = prefix;
    subtasks.extend(rest);
    let s = Schedule { subtasks, revision: schedule.revision + 1 };
    ctx.push_schedule(&s);
    Ok(s)
}

fn terminal_for(e: &BackendError) -> Terminal {
    match e {
        BackendError::ContextOverflow { .. } => Terminal::ContextOverflow,
        _ => Terminal::Incomplete,
    }
}

fn answer_from(results: &[(SubTask, AgentResult)]) -> String {
    results
        .iter()
        .filter(|(_, r)| r.status == AgentStatus::Done)
        .map(|(s, r)| format!("{}: {}", s.agent.agent_name(), r.summary))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs one task end to end. Every outcome, including backend failures, ends
/// up in the returned trace.
pub fn run_task(
    task: &TaskPrompt,
    cfg: &StrategyConfig,
    refs: EngineRefs<'_>,
    session: &mut SandboxSession,
    emit: &dyn Fn(&RunEvent),
) -> ExecutionTrace {
    let mut ctx = RunCtx::new(refs, cfg, emit);
    let (terminal, answer) = match cfg.kind {
        StrategyKind::SingleAgent => single_agent(&mut ctx, task, session),
        StrategyKind::CompositionOnly => composition_only(&mut ctx, task, session),
        StrategyKind::LedgerLoop => ledger_loop(&mut ctx, task, session),
        StrategyKind::Hybrid => hybrid(&mut ctx, task, session),
    };
    emit(&RunEvent::Final { terminal, answer: answer.clone() });
    ExecutionTrace {
        task_id: task.id.clone(),
        strategy: cfg.kind,
        executed_steps: ctx.calls,
        schedules: ctx.schedules,
        token_usage: ctx.usage,
        final_answer: answer,
        terminal,
        agent_results: ctx.outcomes,
        verdicts: ctx.verdicts,
    }
}

fn single_agent(ctx: &mut RunCtx<'_>, task: &TaskPrompt, session: &mut SandboxSession) -> (Terminal, String) {
    let messages = vec![ChatMessage::system(prompts::copilot_system()), ChatMessage::user(prompts::copilot_request(&task.text))];
    let tools = ctx.refs.registry.all_specs();
    let env = AgentEnv { backend: ctx.refs.backend, registry: ctx.refs.registry, ts: None, ts_k: ctx.cfg.ts_k };
    match agents::run_loop(None, messages, &tools, ctx.cfg.single_agent_rounds, &env, session, ctx.emit) {
        Ok(r) => {
            ctx.usage.absorb(&r.token_usage);
            ctx.calls.extend(r.tool_calls.iter().cloned());
            let terminal = if r.status == AgentStatus::Done { Terminal::Completed } else { Terminal::Incomplete };
            (terminal, r.summary)
        }
        Err(e) => (terminal_for(&e), e.to_string()),
    }
}

fn plan_or_stop(ctx: &mut RunCtx<'_>, task: &TaskPrompt) -> Result<Schedule, (Terminal, String)> {
    plan(ctx, task).map_err(|e| match e {
        OrchestratorError::Backend(b) => (terminal_for(&b), b.to_string()),
        other => (Terminal::Incomplete, other.to_string()),
    })
}

fn composition_only(ctx: &mut RunCtx<'_>, task: &TaskPrompt, session: &mut SandboxSession) -> (Terminal, String) {
    let schedule = match plan_or_stop(ctx, task) {
        Ok(s) => s,
        Err(stop) => return stop,
    };
    match execute_schedule(ctx, &schedule, 0, "", session) {
        Ok(results) => {
            let all_done = results.len() == schedule.subtasks.len() && results.iter().all(|r| r.status == AgentStatus::Done);
            let pairs: Vec<(SubTask, AgentResult)> = schedule.subtasks.iter().cloned().zip(results).collect();
            (if all_done { Terminal::Completed } else { Terminal::Incomplete }, answer_from(&pairs))
        }
        Err(e) => (terminal_for(&e), e.to_string()),
    }
}

fn hybrid(ctx: &mut RunCtx<'_>, task: &TaskPrompt, session: &mut SandboxSession) -> (Terminal, String) {
    let mut schedule = match plan_or_stop(ctx, task) {
        Ok(s) => s,
        Err(stop) => return stop,
    };
    // Results aligned with schedule positions.
    let mut done: Vec<AgentResult> = Vec::new();
    loop {
        let context = done.iter().fold(String::new(), |c, r| append_digest(&c, r));
        let new = match execute_schedule(ctx, &schedule, done.len(), &context, session) {
            Ok(r) => r,
            Err(e) => return (terminal_for(&e), e.to_string()),
        };
        let mut current = done.clone();
        current.extend(new);
        let pairs: Vec<(SubTask, AgentResult)> = schedule.subtasks.iter().cloned().zip(current.iter().cloned()).collect();
        let verdict = match check_completion(ctx, task, &pairs) {
            Ok(v) => v,
            Err(e) => return (terminal_for(&e), e.to_string()),
        };
        if verdict.complete {
            return (Terminal::Completed, answer_from(&pairs));
        }
        let prefix = current.iter().take_while(|r| r.status == AgentStatus::Done).count();
        let failing = current.get(prefix);
        match revise(ctx, task, &schedule, prefix, failing, &verdict) {
            Ok(s) => {
                current.truncate(prefix);
                done = current;
                schedule = s;
            }
            Err(OrchestratorError::MaxRevisions(_)) => return (Terminal::MaxRevisions, answer_from(&pairs)),
            Err(OrchestratorError::Backend(e)) => return (terminal_for(&e), e.to_string()),
            Err(e) => return (Terminal::Incomplete, e.to_string()),
        }
    }
}

fn ledger_loop(ctx: &mut RunCtx<'_>, task: &TaskPrompt, session: &mut SandboxSession) -> (Terminal, String) {
    let first = match plan_or_stop(ctx, task) {
        Ok(s) => s,
        Err(stop) => return stop,
    };
    let mut remaining: Vec<SubTask> = first.subtasks.clone();
    let mut executed: Vec<(SubTask, AgentResult)> = Vec::new();
    let mut context = String::new();
    let mut rounds = 0u32;
    while !remaining.is_empty() {
        let sub = remaining.remove(0);
        let revision = ctx.schedules.len() as u32 - 1;
        let r = match run_step(ctx, &sub, &context, revision, session) {
            Ok(r) => r,
            Err(e) => return (terminal_for(&e), e.to_string()),
        };
        if r.status == AgentStatus::Done {
            context = append_digest(&context, &r);
        }
        executed.push((sub.clone(), r.clone()));
        if rounds == ctx.cfg.max_ledger_rounds {
            return (Terminal::BudgetExhausted, answer_from(&executed));
        }
        rounds += 1;
        let completed: Vec<String> = executed
            .iter()
            .filter(|(_, r)| r.status == AgentStatus::Done)
            .map(|(s, _)| format!("{}({})", s.agent.agent_name(), s.subprompt))
            .collect();
        let rest = Schedule { subtasks: remaining.clone(), revision };
        let messages = vec![
            ChatMessage::system(ctx.orchestrator_system(task)),
            ChatMessage::user(prompts::ledger_request(&task.text, sub.agent, status_key(r.status), &r.summary, &completed, &rest)),
        ];
        let reply = match ctx.model(&messages) {
            Ok(m) => m,
            Err(e) => return (terminal_for(&e), e.to_string()),
        };
        let roster = ctx.roster();
        let replanned = match parse_schedule(&reply.content) {
            Ok(s) if s.iter().all(|t| roster.contains(&t.agent)) => Some(s),
            _ if r.status != AgentStatus::Done => {
                // Retry the failed step, preceded by the hinted agent if any.
                let mut s = Vec::new();
                if let Some(h) = &r.dependency_hint {
                    s.push(SubTask::new(h.agent, format!("Load the data needed ({}) for: {}", h.reason, task.text)));
                    s.push(sub.clone());
                }
                s.extend(remaining.iter().cloned());
                (!s.is_empty() && r.dependency_hint.is_some()).then_some(s)
            }
            _ => None,
        };
        if let Some(new_rest) = replanned {
            remaining = new_rest;
            let mut full: Vec<SubTask> = executed
                .iter()
                .filter(|(_, r)| r.status == AgentStatus::Done)
                .map(|(s, _)| s.clone())
                .collect();
            full.extend(remaining.iter().cloned());
            let s = Schedule { subtasks: full, revision: ctx.schedules.len() as u32 };
            ctx.push_schedule(&s);
        }
    }
    let terminal = if ledger_resolved(task, &executed) { Terminal::Completed } else { Terminal::Incomplete };
    (terminal, answer_from(&executed))
}

/// Every failure was later redone successfully by the same agent, and a plot
/// request got a Map step.
fn ledger_resolved(task: &TaskPrompt, executed: &[(SubTask, AgentResult)]) -> bool {
    let unresolved = executed.iter().enumerate().any(|(i, (s, r))| {
        r.status != AgentStatus::Done
            && !executed[i + 1..].iter().any(|(s2, r2)| s2.agent == s.agent && r2.status == AgentStatus::Done)
    });
    let map_done = executed.iter().any(|(s, r)| s.agent == Domain::Map && r.status == AgentStatus::Done);
    !executed.is_empty() && !unresolved && (!wants_plot(&task.text) || map_done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::scripted::{ScriptedBackend, ScriptedBehavior, ScriptedCall, ScriptedReply, Scope};
    use crate::backend::BackendConfig;
    use crate::events::ignore;
    use crate::sandbox::{Sandbox, SandboxConfig};
    use crate::types::RegionRef;
    use serde_json::json;
    use std::sync::Arc;

    const TASK: &str = "Use 2024 NDVI for brisbane to recommend crop rotation areas and plot them on the map";

    fn task() -> TaskPrompt {
        TaskPrompt { id: "t1".into(), domain: Domain::Agriculture, text: TASK.into(), region: RegionRef::new("brisbane"), date_range: None }
    }

    fn call(name: &str, args: serde_json::Value) -> ScriptedReply {
        ScriptedReply::Calls(vec![ScriptedCall { name: name.into(), args }])
    }

    const DB: &str = "Load NDVI for brisbane 2024";
    const OPS: &str = "Filter brisbane";
    const AG: &str = "Recommend crop rotation areas from low NDVI clusters";
    const MAP: &str = "Plot the clusters";

    fn full_program() -> String {
        Schedule {
            subtasks: vec![
                SubTask::new(Domain::Database, DB),
                SubTask::new(Domain::DataOps, OPS),
                SubTask::new(Domain::Agriculture, AG),
                SubTask::new(Domain::Map, MAP),
            ],
            revision: 0,
        }
        .to_program()
    }

    /// Agents behave per the gold workflow; the planner first omits the data
    /// steps, and revision / ledger replanning restore them.
    fn behavior(inject: bool) -> ScriptedBehavior {
        let mut b = ScriptedBehavior::default();
        b.push(Scope::Agent(Domain::Database), DB, vec![
            call("load_product", json!({"product": "ndvi", "region": "brisbane", "date_range": "2024"})),
            ScriptedReply::Final("loaded NDVI".into()),
        ]);
        b.push(Scope::Agent(Domain::DataOps), OPS, vec![
            call("filter_region", json!({"handle": "$handle", "region": "brisbane"})),
            ScriptedReply::Final("filtered".into()),
        ]);
        b.push(Scope::Agent(Domain::Agriculture), AG, vec![
            call("low_ndvi_clusters", json!({"handle": "$handle", "threshold": 0.3, "min_cluster_size": 2})),
            ScriptedReply::Final("found clusters".into()),
        ]);
        b.push(Scope::Agent(Domain::Map), MAP, vec![
            call("map_add_layer", json!({"handle": "$handle"})),
            ScriptedReply::Final("plotted".into()),
        ]);
        let first = if inject {
            Schedule { subtasks: vec![SubTask::new(Domain::Agriculture, AG), SubTask::new(Domain::Map, MAP)], revision: 0 }
                .to_program()
        } else {
            full_program()
        };
        b.push(Scope::Orchestrator, format!("{}\nTask: {TASK}", prompts::PLAN_HEADER), vec![ScriptedReply::Final(first)]);
        b.push(Scope::Orchestrator, format!("{}\nTask: {TASK}", prompts::REVISION_HEADER), vec![ScriptedReply::Final(full_program())]);
        b.push(
            Scope::Orchestrator,
            format!("{}\nTask: {TASK}\nLast result: Agriculture needs_dependency", prompts::LEDGER_HEADER),
            vec![ScriptedReply::Final(full_program())],
        );
        b
    }

    fn run(kind: StrategyKind, b: ScriptedBehavior) -> (ExecutionTrace, SandboxSession) {
        run_cfg(StrategyConfig::new(kind), b)
    }

    fn run_cfg(cfg: StrategyConfig, b: ScriptedBehavior) -> (ExecutionTrace, SandboxSession) {
        let be = ScriptedBackend::new(BackendConfig::scripted(8192), b);
        let reg = ToolRegistry::with_real_tools(&Domain::ALL);
        let mut s = SandboxSession::new(Arc::new(Sandbox::new(SandboxConfig::default())));
        let refs = EngineRefs { backend: &be, registry: &reg, ts: None, wm: None };
        let t = run_task(&task(), &cfg, refs, &mut s, &ignore);
        (t, s)
    }

    #[test]
    fn plan_parses_four_steps() {
        let (t, _) = run(StrategyKind::CompositionOnly, behavior(false));
        assert_eq!(t.schedules[0].agents(), vec![Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map]);
        assert_eq!(t.terminal, Terminal::Completed);
        assert_eq!(t.executed_steps.len(), 4);
    }

    #[test]
    fn hybrid_recovers_from_dependency() {
        let (t, s) = run(StrategyKind::Hybrid, behavior(true));
        assert_eq!(t.terminal, Terminal::Completed);
        assert_eq!(t.schedules.len(), 2);
        assert!(t.revisions_contiguous());
        assert_eq!(t.schedules[1].agents(), vec![Domain::Database, Domain::DataOps, Domain::Agriculture, Domain::Map]);
        assert_eq!(t.agent_results[0].status, AgentStatus::NeedsDependency);
        assert_eq!(t.verdicts.len(), 2);
        assert!(!t.verdicts[0].complete);
        assert!(t.verdicts[0].revision_directive.as_deref().unwrap().contains("Database"));
        assert_eq!(s.map().layers.len(), 1);
        assert!(t.token_usage.is_consistent());
    }

    #[test]
    fn composition_does_not_recover() {
        let (t, _) = run(StrategyKind::CompositionOnly, behavior(true));
        assert_eq!(t.terminal, Terminal::Incomplete);
        assert_eq!(t.schedules.len(), 1);
        assert_eq!(t.agent_results.len(), 1);
    }

    #[test]
    fn ledger_recovers_and_costs_most() {
        let (l, _) = run(StrategyKind::LedgerLoop, behavior(true));
        let (h, _) = run(StrategyKind::Hybrid, behavior(true));
        let (c, _) = run(StrategyKind::CompositionOnly, behavior(true));
        assert_eq!(l.terminal, Terminal::Completed);
        assert!(l.revisions_contiguous());
        assert!(l.token_usage.total_tokens >= h.token_usage.total_tokens);
        assert!(h.token_usage.total_tokens >= c.token_usage.total_tokens);
    }

    #[test]
    fn ledger_bound() {
        let mut cfg = StrategyConfig::new(StrategyKind::LedgerLoop);
        cfg.max_ledger_rounds = 2;
        let (t, _) = run_cfg(cfg, behavior(false));
        assert_eq!(t.terminal, Terminal::BudgetExhausted);
    }

    #[test]
    fn missing_map_step_is_revised_in() {
        let mut b = behavior(false);
        let three = Schedule {
            subtasks: vec![
                SubTask::new(Domain::Database, DB),
                SubTask::new(Domain::DataOps, OPS),
                SubTask::new(Domain::Agriculture, AG),
            ],
            revision: 0,
        };
        b.rules.retain(|r| !r.pattern.starts_with(prompts::PLAN_HEADER) && !r.pattern.starts_with(prompts::REVISION_HEADER));
        b.push(Scope::Orchestrator, prompts::PLAN_HEADER, vec![ScriptedReply::Final(three.to_program())]);
        b.push(Scope::Orchestrator, prompts::REVISION_HEADER, vec![ScriptedReply::Final(
            Schedule { subtasks: vec![SubTask::new(Domain::Map, MAP)], revision: 0 }.to_program(),
        )]);
        let (t, _) = run(StrategyKind::Hybrid, b);
        assert_eq!(t.verdicts[0].missing, "map output");
        assert_eq!(t.terminal, Terminal::Completed);
        // The completed prefix ran once.
        let loads = t.executed_steps.iter().filter(|c| c.tool == "load_product").count();
        assert_eq!(loads, 1);
        assert_eq!(t.schedules[1].subtasks[..3], three.subtasks[..]);
    }

    #[test]
    fn max_revisions_reached() {
        // The agent always fails and revision never helps.
        let mut b = ScriptedBehavior::default();
        b.push(Scope::Orchestrator, prompts::PLAN_HEADER, vec![ScriptedReply::Final("schedule = [Urban(do it)]".into())]);
        b.push(Scope::Agent(Domain::Urban), "do it", vec![ScriptedReply::Final("NEEDS_DEPENDENCY(Climate): no".into())]);
        b.push(Scope::Agent(Domain::Climate), "Load", vec![ScriptedReply::Final("NEEDS_DEPENDENCY(Urban): no".into())]);
        let mut cfg = StrategyConfig::new(StrategyKind::Hybrid);
        cfg.max_revisions = 2;
        let (t, _) = run_cfg(cfg, b);
        assert_eq!(t.terminal, Terminal::MaxRevisions);
        assert_eq!(t.schedules.len(), 3);
        assert!(t.revisions_contiguous());
    }

    #[test]
    fn unparseable_plan() {
        let mut b = ScriptedBehavior::default();
        b.push(Scope::Orchestrator, prompts::PLAN_HEADER, vec![ScriptedReply::Final("I would load then plot.".into())]);
        let (t, _) = run(StrategyKind::Hybrid, b);
        assert_eq!(t.terminal, Terminal::Incomplete);
        assert!(t.final_answer.starts_with("UnparseableSchedule"));
        // Planner was asked twice.
        assert_eq!(t.token_usage.calls.len(), 2);
        assert!(t.schedules.is_empty());
    }

    #[test]
    fn revise_contract() {
        let be = ScriptedBackend::new(BackendConfig::scripted(8192), ScriptedBehavior::default());
        let reg = ToolRegistry::with_real_tools(&Domain::ALL);
        let refs = EngineRefs { backend: &be, registry: &reg, ts: None, wm: None };
        let cfg = StrategyConfig::default();
        let mut ctx = RunCtx::new(refs, &cfg, &ignore);
        let s = Schedule { subtasks: vec![SubTask::new(Domain::Map, "x")], revision: 0 };
        assert!(matches!(
            revise(&mut ctx, &task(), &s, 0, None, &CompletionVerdict::complete()),
            Err(OrchestratorError::Contract(_))
        ));
        let at_limit = Schedule { revision: 3, ..s };
        assert_eq!(
            revise(&mut ctx, &task(), &at_limit, 0, None, &CompletionVerdict::incomplete("x", None)),
            Err(OrchestratorError::MaxRevisions(3))
        );
    }

    #[test]
    fn single_agent_runs_with_qualified_names() {
        let mut b = ScriptedBehavior::default();
        b.push(Scope::SingleAgent, TASK, vec![
            call("database__load_product", json!({"product": "ndvi", "region": "brisbane", "date_range": "2024"})),
            call("agriculture__low_ndvi_clusters", json!({"handle": "$handle", "threshold": 0.3, "min_cluster_size": 2})),
            call("map__map_add_layer", json!({"handle": "$handle"})),
            ScriptedReply::Final("all done".into()),
        ]);
        let (t, s) = run(StrategyKind::SingleAgent, b);
        assert_eq!(t.terminal, Terminal::Completed);
        assert_eq!(t.executed_steps.len(), 3);
        assert!(t.schedules.is_empty());
        assert_eq!(s.map().layers.len(), 1);
    }

    #[test]
    fn single_agent_overflows_with_every_toolkit() {
        let be = ScriptedBackend::new(BackendConfig::scripted(8192), ScriptedBehavior::default());
        let reg = ToolRegistry::default_full(7);
        let mut s = SandboxSession::new(Arc::new(Sandbox::new(SandboxConfig::default())));
        let refs = EngineRefs { backend: &be, registry: &reg, ts: None, wm: None };
        let t = run_task(&task(), &StrategyConfig::new(StrategyKind::SingleAgent), refs, &mut s, &ignore);
        assert_eq!(t.terminal, Terminal::ContextOverflow);
        assert!(t.executed_steps.is_empty());
    }

    #[test]
    fn events_are_ordered() {
        let be = ScriptedBackend::new(BackendConfig::scripted(8192), behavior(false));
        let reg = ToolRegistry::with_real_tools(&Domain::ALL);
        let mut s = SandboxSession::new(Arc::new(Sandbox::new(SandboxConfig::default())));
        let refs = EngineRefs { backend: &be, registry: &reg, ts: None, wm: None };
        let log = std::sync::Mutex::new(Vec::new());
        let sink = |e: &RunEvent| log.lock().unwrap().push(e.kind());
        run_task(&task(), &StrategyConfig::default(), refs, &mut s, &sink);
        let kinds = log.into_inner().unwrap();
        assert_eq!(kinds.first(), Some(&"schedule"));
        assert_eq!(kinds.last(), Some(&"final"));
        assert_eq!(kinds.iter().filter(|k| **k == "agent_start").count(), 4);
        assert_eq!(kinds.iter().filter(|k| **k == "tool_call").count(), 4);
        assert!(kinds.contains(&"verdict"));
    }

    #[test]
    fn verdict_parsing() {
        assert!(parse_verdict("COMPLETE").complete);
        assert_eq!(parse_verdict("INCOMPLETE: no map").missing, "no map");
        assert_eq!(parse_verdict("hmm").missing, "unverifiable");
        assert_eq!(parse_verdict("INCOMPLETE").missing, "unverifiable");
    }
}
