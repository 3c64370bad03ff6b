//! Chat-completion-with-tool-calling abstraction.
//!
//! [`complete`] is the only entry point the engine uses. It enforces the
//! context budget before a backend sees the request and does the local token
//! accounting, so scripted and live runs are charged the same way.

pub mod http;
pub mod scripted;
mod tokenizer;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{ToolSpec, Usage};

pub use tokenizer::{count_tokens, truncate_to_tokens};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("ContextOverflow: request needs {required} tokens, budget is {budget}")]
    ContextOverflow { required: u64, budget: u64 },
    #[error("TransportError: {0}")]
    Transport(String),
    #[error("ProtocolError: {0}")]
    Protocol(String),
    #[error("DuplicateTool: {0}")]
    DuplicateTool(String),
    #[error("invalid backend config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCallRequest {
    pub id: String,
    pub name: String,
    /// JSON object text as produced by the model.
    pub arguments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCallRequest>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into(), tool_calls: None, tool_call_id: None }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into(), tool_calls: None, tool_call_id: None }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into(), tool_calls: None, tool_call_id: None }
    }

    pub fn assistant_calls(content: impl Into<String>, calls: Vec<ToolCallRequest>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
            tool_calls: Some(calls),
            tool_call_id: None,
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Tool,
            content: content.into(),
            tool_calls: None,
            tool_call_id: Some(call_id.into()),
        }
    }

    pub fn calls(&self) -> &[ToolCallRequest] {
        self.tool_calls.as_deref().unwrap_or(&[])
    }

    pub fn token_count(&self) -> u64 {
        let calls: usize = self
            .calls()
            .iter()
            .map(|c| count_tokens(&c.name) + count_tokens(&c.arguments))
            .sum();
        (count_tokens(&self.content) + calls) as u64
    }
}

pub fn messages_tokens(messages: &[ChatMessage]) -> u64 {
    messages.iter().map(ChatMessage::token_count).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    Http,
}

fn default_budget() -> u32 {
    8192
}
fn default_max_completion() -> u32 {
    512
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_budget")]
    pub context_budget: u32,
    #[serde(default = "default_max_completion")]
    pub max_completion_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn scripted(context_budget: u32) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_name: "scripted".into(),
            context_budget,
            max_completion_tokens: default_max_completion(),
            temperature: 0.0,
            max_in_flight: default_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.kind == BackendKind::Http && self.endpoint.as_deref().unwrap_or("").is_empty() {
            return Err(BackendError::Config("http backend requires an endpoint".into()));
        }
        if self.context_budget < 512 {
            return Err(BackendError::Config(format!(
                "context_budget must be at least 512, got {}",
                self.context_budget
            )));
        }
        if self.max_completion_tokens == 0 {
            return Err(BackendError::Config("max_completion_tokens must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(BackendError::Config("max_in_flight must be positive".into()));
        }
        Ok(())
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::scripted(default_budget())
    }
}

/// What a backend hands back before accounting.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub message: ChatMessage,
    /// Usage reported by a live endpoint, if any.
    pub reported: Option<Usage>,
}

pub trait ChatBackend: Send + Sync {
    fn config(&self) -> &BackendConfig;

    fn respond(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<BackendReply, BackendError>;
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub message: ChatMessage,
    pub usage: Usage,
    pub reported: Option<Usage>,
}

pub fn input_tokens(messages: &[ChatMessage], tools: &[ToolSpec]) -> u64 {
    messages_tokens(messages) + tools.iter().map(|t| t.schema_token_cost as u64).sum::<u64>()
}

/// Budget check, then dispatch with local accounting.
pub fn complete(
    backend: &dyn ChatBackend,
    messages: &[ChatMessage],
    tools: &[ToolSpec],
) -> Result<Completion, BackendError> {
    let budget = backend.config().context_budget as u64;
    let required = input_tokens(messages, tools);
    if required > budget {
        return Err(BackendError::ContextOverflow { required, budget });
    }
    let reply = backend.respond(messages, tools)?;
    let usage = Usage::new(required, reply.message.token_count());
    Ok(Completion { message: reply.message, usage, reported: reply.reported })
}

pub fn render_tool_schema(tool: &ToolSpec) -> String {
    let params: Vec<String> = tool
        .params
        .iter()
        .map(|p| {
            let opt = if p.required { "" } else { "?" };
            format!("{}{}: {}", p.name, opt, p.kind.key())
        })
        .collect();
    format!(
        "{}.{}({}) -- {}",
        tool.agent.agent_name(),
        tool.name,
        params.join(", "),
        tool.description
    )
}

pub fn schema_cost(tool: &ToolSpec) -> u32 {
    count_tokens(&render_tool_schema(tool)) as u32
}

/// Canonical rendering sorted by agent then name, one tool per line.
pub fn render_tool_schemas(tools: &[ToolSpec]) -> Result<String, BackendError> {
    let mut sorted: Vec<&ToolSpec> = tools.iter().collect();
    sorted.sort_by(|a, b| (a.agent, &a.name).cmp(&(b.agent, &b.name)));
    let mut seen = BTreeSet::new();
    for t in &sorted {
        if !seen.insert((t.agent, t.name.as_str())) {
            return Err(BackendError::DuplicateTool(format!("{}.{}", t.agent, t.name)));
        }
    }
    Ok(sorted.iter().map(|t| render_tool_schema(t)).collect::<Vec<_>>().join("\n"))
}

/// Wraps a backend and independently tallies calls and tokens.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
    tokens: AtomicU64,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend { inner, calls: AtomicU64::new(0), tokens: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn tokens(&self) -> u64 {
        self.tokens.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn config(&self) -> &BackendConfig {
        self.inner.config()
    }

    fn respond(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let reply = self.inner.respond(messages, tools)?;
        let schema: u64 = tools.iter().map(|t| count_tokens(&render_tool_schema(t)) as u64).sum();
        let prompt: u64 = messages
            .iter()
            .map(|m| {
                let calls: usize = m
                    .calls()
                    .iter()
                    .map(|c| count_tokens(&c.name) + count_tokens(&c.arguments))
                    .sum();
                (count_tokens(&m.content) + calls) as u64
            })
            .sum();
        let completion = reply.message.token_count();
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.tokens.fetch_add(schema + prompt + completion, Ordering::SeqCst);
        Ok(reply)
    }
}
