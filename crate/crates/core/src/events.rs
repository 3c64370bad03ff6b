//! Progress events emitted while a task runs (streamed over SSE).

use serde::{Deserialize, Serialize};

use crate::types::{AgentStatus, CallStatus, Domain, Terminal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RunEvent {
    Schedule { revision: u32, program: String },
    AgentStart { agent: Domain, subprompt: String },
    ToolCall { agent: Domain, tool: String, status: CallStatus, payload: String },
    AgentDone { agent: Domain, status: AgentStatus, summary: String },
    Verdict { complete: bool, missing: String },
    Final { terminal: Terminal, answer: String },
}

impl RunEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            RunEvent::Schedule { .. } => "schedule",
            RunEvent::AgentStart { .. } => "agent_start",
            RunEvent::ToolCall { .. } => "tool_call",
            RunEvent::AgentDone { .. } => "agent_done",
            RunEvent::Verdict { .. } => "verdict",
            RunEvent::Final { .. } => "final",
        }
    }

    pub fn is_final(&self) -> bool {
        matches!(self, RunEvent::Final { .. })
    }
}

/// Observer that drops everything.
pub fn ignore(_: &RunEvent) {}
