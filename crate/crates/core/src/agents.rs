//! Per-agent function-calling runtime.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::backend::{complete, truncate_to_tokens, BackendError, ChatBackend, ChatMessage};
use crate::events::RunEvent;
use crate::prompts;
use crate::registry::retrieval::TS_K;
use crate::registry::{format_guidance, ToolRegistry, TsStore};
use crate::sandbox::{ErrorCode, SandboxSession};
use crate::types::{AgentOutcome, AgentStatus, CallStatus, DependencyHint, Domain, ToolCall, TokenUsage, ToolSpec};

pub const DEFAULT_MAX_TOOL_ROUNDS: usize = 8;
/// Upper bound on the inter-agent context digest.
pub const DIGEST_TOKENS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent: Domain,
    pub max_tool_rounds: usize,
}

impl AgentSpec {
    pub fn new(agent: Domain) -> Self {
        AgentSpec { agent, max_tool_rounds: DEFAULT_MAX_TOOL_ROUNDS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub agent: Option<Domain>,
    pub status: AgentStatus,
    pub summary: String,
    pub dependency_hint: Option<DependencyHint>,
    pub tool_calls: Vec<ToolCall>,
    pub token_usage: TokenUsage,
    /// Handles produced by successful calls, in call order.
    pub handles: Vec<String>,
    pub rounds: usize,
}

impl AgentResult {
    pub fn outcome(&self, revision: u32, subprompt: &str) -> AgentOutcome {
        AgentOutcome {
            agent: self.agent.unwrap_or(Domain::Database),
            revision,
            subprompt: subprompt.to_string(),
            status: self.status,
            summary: self.summary.clone(),
            dependency_hint: self.dependency_hint.clone(),
            tool_call_count: self.tool_calls.len(),
            total_tokens: self.token_usage.total_tokens,
        }
    }
}

/// Shared read-only pieces an agent needs.
#[derive(Clone, Copy)]
pub struct AgentEnv<'a> {
    pub backend: &'a dyn ChatBackend,
    pub registry: &'a ToolRegistry,
    pub ts: Option<&'a TsStore>,
    pub ts_k: usize,
}

impl<'a> AgentEnv<'a> {
    pub fn new(backend: &'a dyn ChatBackend, registry: &'a ToolRegistry) -> Self {
        AgentEnv { backend, registry, ts: None, ts_k: TS_K }
    }

    pub fn with_ts(mut self, ts: Option<&'a TsStore>) -> Self {
        self.ts = ts;
        self
    }
}

pub fn status_key(s: AgentStatus) -> &'static str {
    match s {
        AgentStatus::Done => "done",
        AgentStatus::Failed => "failed",
        AgentStatus::NeedsDependency => "needs_dependency",
    }
}

/// System message (role plus guidance) then user message (query plus context).
pub fn build_agent_prompt(agent: Domain, subprompt: &str, ts_guidance: &str, context: &str) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(prompts::agent_system(agent, ts_guidance)),
        ChatMessage::user(prompts::agent_query(subprompt, context)),
    ]
}

/// Which agent a tool error should be routed to.
pub fn dependency_for(code: ErrorCode) -> Option<Domain> {
    match code {
        ErrorCode::MissingProduct | ErrorCode::UnknownRegion => Some(Domain::Database),
        _ => None,
    }
}

/// Parses `NEEDS_DEPENDENCY(Agent): reason` anywhere in the text.
pub fn parse_dependency(text: &str) -> Option<DependencyHint> {
    let at = text.find(prompts::DEPENDENCY_MARKER)?;
    let rest = &text[at + prompts::DEPENDENCY_MARKER.len()..];
    let rest = rest.trim_start().strip_prefix('(')?;
    let close = rest.find(')')?;
    let agent: Domain = rest[..close].trim().parse().ok()?;
    let reason = rest[close + 1..].trim_start().trim_start_matches(':').trim();
    let reason = reason.lines().next().unwrap_or("").trim();
    Some(DependencyHint { agent, reason: if reason.is_empty() { "dependency".into() } else { reason.into() } })
}

/// Bounded hand-off text for the next agent.
pub fn digest(result: &AgentResult) -> String {
    let who = result.agent.map_or("Copilot", |a| a.agent_name());
    let handles = if result.handles.is_empty() { "none".to_string() } else { result.handles.join(", ") };
    let head = format!("{who} {}; handles: {handles}; summary: ", status_key(result.status));
    let text = format!("{head}{}", result.summary.replace('\n', " "));
    truncate_to_tokens(&text, DIGEST_TOKENS).to_string()
}

/// Runs one subtask for a domain agent.
pub fn run_subtask(
    spec: &AgentSpec,
    subprompt: &str,
    context: &str,
    env: &AgentEnv<'_>,
    session: &mut SandboxSession,
    emit: &dyn Fn(&RunEvent),
) -> Result<AgentResult, BackendError> {
    let guidance = match env.ts {
        Some(store) => store.retrieve(spec.agent, subprompt, env.ts_k.max(1)).map(|h| format_guidance(&h, &[])).unwrap_or_default(),
        None => String::new(),
    };
    let messages = build_agent_prompt(spec.agent, subprompt, &guidance, context);
    let tools = env.registry.toolkit(spec.agent);
    run_loop(Some(spec.agent), messages, &tools, spec.max_tool_rounds, env, session, emit)
}

/// The function-calling loop. `who = None` is the single-agent copilot, which
/// sees every tool and must use qualified names.
pub(crate) fn run_loop(
    who: Option<Domain>,
    mut messages: Vec<ChatMessage>,
    tools: &[ToolSpec],
    max_rounds: usize,
    env: &AgentEnv<'_>,
    session: &mut SandboxSession,
    emit: &dyn Fn(&RunEvent),
) -> Result<AgentResult, BackendError> {
    let mut result = AgentResult {
        agent: who,
        status: AgentStatus::Done,
        summary: String::new(),
        dependency_hint: None,
        tool_calls: Vec::new(),
        token_usage: TokenUsage::default(),
        handles: Vec::new(),
        rounds: 0,
    };
    let mut strikes: BTreeMap<String, u32> = BTreeMap::new();
    let mut last_error = String::new();
    loop {
        let c = complete(env.backend, &messages, tools)?;
        result.token_usage.record(c.usage, c.reported);
        let msg = c.message;
        if msg.calls().is_empty() {
            finish_with_text(&mut result, who, &msg.content);
            return Ok(result);
        }
        if result.rounds == max_rounds {
            result.status = AgentStatus::Failed;
            result.summary = format!("RoundsExhausted after {max_rounds} tool rounds; last error: {}", none_if_empty(&last_error));
            return Ok(result);
        }
        result.rounds += 1;
        messages.push(msg.clone());
        for call in msg.calls() {
            let resolved = resolve_name(who, &call.name, env.registry);
            let parsed: Option<serde_json::Map<String, Value>> = match serde_json::from_str::<Value>(&call.arguments) {
                Ok(Value::Object(m)) => Some(m),
                _ => None,
            };
            let (agent, tool) = match &resolved {
                Some((a, t)) => (*a, t.clone()),
                None => (who.unwrap_or(Domain::Database), call.name.clone()),
            };
            let outcome = match (&resolved, &parsed) {
                (None, _) => Err(crate::sandbox::ToolError::new(
                    ErrorCode::UnknownTool,
                    format!("'{}' is not available to this agent", call.name),
                )),
                (Some(_), None) => Err(crate::sandbox::ToolError::new(
                    ErrorCode::InvalidArgs,
                    "arguments must be a JSON object; resend the call with valid JSON".to_string(),
                )),
                (Some(_), Some(args)) => env.registry.dispatch(session, agent, &tool, args),
            };
            let args: BTreeMap<String, Value> = parsed.clone().unwrap_or_default().into_iter().collect();
            match outcome {
                Ok(out) => {
                    if let Some(h) = out.payload.get("handle").and_then(Value::as_str) {
                        result.handles.push(h.to_string());
                    }
                    let payload = out.payload.to_string();
                    emit(&RunEvent::ToolCall { agent, tool: tool.clone(), status: CallStatus::Ok, payload: payload.clone() });
                    messages.push(ChatMessage::tool(call.id.clone(), payload.clone()));
                    result.tool_calls.push(ToolCall {
                        agent,
                        tool,
                        args,
                        result_status: CallStatus::Ok,
                        result_payload: payload,
                        accessed: out.accessed,
                    });
                }
                Err(e) => {
                    let text = e.to_string();
                    emit(&RunEvent::ToolCall { agent, tool: tool.clone(), status: CallStatus::Error, payload: text.clone() });
                    messages.push(ChatMessage::tool(call.id.clone(), text.clone()));
                    result.tool_calls.push(ToolCall {
                        agent,
                        tool: tool.clone(),
                        args,
                        result_status: CallStatus::Error,
                        result_payload: text.clone(),
                        accessed: Default::default(),
                    });
                    last_error = text;
                    if e.code == ErrorCode::InvalidArgs {
                        let n = strikes.entry(tool.clone()).or_default();
                        *n += 1;
                        if *n >= 2 {
                            result.status = AgentStatus::Failed;
                            result.summary = format!("malformed arguments for {tool} twice: {}", e.message);
                            return Ok(result);
                        }
                    }
                    if let (Some(me), Some(target)) = (who, dependency_for(e.code)) {
                        let reason = e.message.split(" (").next().unwrap_or(&e.message).to_string();
                        if target == me {
                            result.status = AgentStatus::Failed;
                            result.summary = last_error.clone();
                        } else {
                            result.status = AgentStatus::NeedsDependency;
                            result.summary = format!("{}({}): {reason}", prompts::DEPENDENCY_MARKER, target.agent_name());
                            result.dependency_hint = Some(DependencyHint { agent: target, reason });
                        }
                        return Ok(result);
                    }
                }
            }
        }
    }
}

fn none_if_empty(s: &str) -> &str {
    if s.is_empty() {
        "none"
    } else {
        s
    }
}

fn finish_with_text(result: &mut AgentResult, who: Option<Domain>, text: &str) {
    result.summary = text.trim().to_string();
    match (who, parse_dependency(text)) {
        (Some(me), Some(hint)) if hint.agent != me => {
            result.status = AgentStatus::NeedsDependency;
            result.dependency_hint = Some(hint);
        }
        (Some(_), Some(_)) => result.status = AgentStatus::Failed,
        _ => result.status = AgentStatus::Done,
    }
}

/// Maps a model-issued tool name onto (agent, tool), enforcing isolation.
fn resolve_name(who: Option<Domain>, name: &str, registry: &ToolRegistry) -> Option<(Domain, String)> {
    match who {
        None => registry.resolve_qualified(name),
        Some(me) => {
            let bare = match name.split_once("__") {
                Some((a, t)) if a.parse::<Domain>().ok() == Some(me) => t,
                Some(_) => return None,
                None => name,
            };
            registry.get(me, bare).map(|_| (me, bare.to_string()))
        }
    }
}
