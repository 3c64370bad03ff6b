//! Deterministic playback backend.
//!
//! A reply is a pure function of the conversation and the behavior table:
//! the rule is chosen from the role line of the system message and the
//! latest user message, and the reply index is the number of assistant turns
//! since that user message.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendConfig, BackendError, BackendReply, ChatBackend, ChatMessage, Role, ToolCallRequest};
use crate::prompts;
use crate::types::{Domain, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "agent")]
pub enum Scope {
    Any,
    Orchestrator,
    Verifier,
    SingleAgent,
    Agent(Domain),
}

impl Scope {
    pub fn detect(system: &str) -> Option<Scope> {
        let head = system.lines().next().unwrap_or("");
        if head.starts_with(prompts::ORCHESTRATOR_ROLE) {
            return Some(Scope::Orchestrator);
        }
        if head.starts_with(prompts::VERIFIER_ROLE) {
            return Some(Scope::Verifier);
        }
        if head.starts_with(prompts::COPILOT_ROLE) {
            return Some(Scope::SingleAgent);
        }
        Domain::ALL
            .into_iter()
            .find(|d| head.starts_with(&prompts::agent_role(*d)))
            .map(Scope::Agent)
    }

    fn admits(self, actual: Option<Scope>) -> bool {
        self == Scope::Any || Some(self) == actual
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub name: String,
    /// Argument object. String values `$handle` and `$handle~k` are replaced
    /// at playback by the latest (or k-th latest) `@hN` handle seen in the
    /// conversation.
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedReply {
    Final(String),
    Calls(Vec<ScriptedCall>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub scope: Scope,
    pub pattern: String,
    pub replies: Vec<ScriptedReply>,
}

/// Per-task alteration applied when a behavior is compiled from gold
/// solutions. Step indices refer to gold step positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    DropStep(usize),
    /// Drops the final gold step of every task.
    DropLastStep,
    SwapSteps(usize, usize),
    WrongArgs(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    pub rules: Vec<ScriptRule>,
    pub default_reply: String,
    #[serde(default)]
    pub perturbation: Option<Perturbation>,
}

impl Default for ScriptedBehavior {
    fn default() -> Self {
        ScriptedBehavior::with_default("done")
    }
}

impl ScriptedBehavior {
    pub fn with_default(reply: &str) -> Self {
        ScriptedBehavior { rules: Vec::new(), default_reply: reply.to_string(), perturbation: None }
    }

    pub fn push(&mut self, scope: Scope, pattern: impl Into<String>, replies: Vec<ScriptedReply>) {
        self.rules.push(ScriptRule { scope, pattern: pattern.into(), replies });
    }

    pub fn extend(&mut self, other: ScriptedBehavior) {
        self.rules.extend(other.rules);
    }

    /// Longest matching pattern wins; ties go to the earliest rule.
    fn select(&self, scope: Option<Scope>, user: &str) -> Option<&ScriptRule> {
        let mut best: Option<&ScriptRule> = None;
        for r in &self.rules {
            if r.scope.admits(scope) && user.contains(r.pattern.as_str()) {
                match best {
                    Some(b) if b.pattern.len() >= r.pattern.len() => {}
                    _ => best = Some(r),
                }
            }
        }
        best
    }
}

pub struct ScriptedBackend {
    config: BackendConfig,
    behavior: ScriptedBehavior,
}

impl ScriptedBackend {
    pub fn new(config: BackendConfig, behavior: ScriptedBehavior) -> Self {
        ScriptedBackend { config, behavior }
    }

    pub fn behavior(&self) -> &ScriptedBehavior {
        &self.behavior
    }

    pub fn reply_for(&self, messages: &[ChatMessage]) -> ChatMessage {
        let scope = messages
            .iter()
            .find(|m| m.role == Role::System)
            .and_then(|m| Scope::detect(&m.content));
        let last_user = messages.iter().rposition(|m| m.role == Role::User);
        let user = last_user.map(|i| messages[i].content.as_str()).unwrap_or("");
        let turn = match last_user {
            Some(i) => messages[i + 1..].iter().filter(|m| m.role == Role::Assistant).count(),
            None => messages.iter().filter(|m| m.role == Role::Assistant).count(),
        };
        let reply = self.behavior.select(scope, user).and_then(|r| r.replies.get(turn));
        match reply {
            None => ChatMessage::assistant(self.behavior.default_reply.clone()),
            Some(ScriptedReply::Final(text)) => ChatMessage::assistant(text.clone()),
            Some(ScriptedReply::Calls(calls)) => {
                let handles = handles_in(messages);
                let reqs = calls
                    .iter()
                    .enumerate()
                    .map(|(i, c)| ToolCallRequest {
                        id: format!("call_{turn}_{i}"),
                        name: c.name.clone(),
                        arguments: resolve_placeholders(&c.args, &handles).to_string(),
                    })
                    .collect();
                ChatMessage::assistant_calls("", reqs)
            }
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn respond(&self, messages: &[ChatMessage], _tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        Ok(BackendReply { message: self.reply_for(messages), reported: None })
    }
}

/// Distinct `@hN` handles in order of first appearance.
pub fn handles_in(messages: &[ChatMessage]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in messages {
        for h in scan_handles(&m.content) {
            if !out.contains(&h) {
                out.push(h);
            }
        }
    }
    out
}

pub fn scan_handles(text: &str) -> Vec<String> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 2 < bytes.len() + 1 {
        if bytes[i] == b'@' && i + 1 < bytes.len() && bytes[i + 1] == b'h' {
            let start = i;
            let mut j = i + 2;
            while j < bytes.len() && bytes[j].is_ascii_digit() {
                j += 1;
            }
            if j > i + 2 {
                out.push(text[start..j].to_string());
                i = j;
                continue;
            }
        }
        i += 1;
    }
    out
}

fn resolve_placeholders(v: &Value, handles: &[String]) -> Value {
    match v {
        Value::String(s) => {
            if let Some(rest) = s.strip_prefix("$handle") {
                let back: usize = if rest.is_empty() {
                    0
                } else if let Some(k) = rest.strip_prefix('~') {
                    match k.parse() {
                        Ok(k) => k,
                        Err(_) => return v.clone(),
                    }
                } else {
                    return v.clone();
                };
                if back < handles.len() {
                    return Value::String(handles[handles.len() - 1 - back].clone());
                }
            }
            v.clone()
        }
        Value::Object(m) => {
            Value::Object(m.iter().map(|(k, x)| (k.clone(), resolve_placeholders(x, handles))).collect())
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| resolve_placeholders(x, handles)).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn backend(b: ScriptedBehavior) -> ScriptedBackend {
        ScriptedBackend::new(BackendConfig::scripted(4096), b)
    }

    #[test]
    fn scope_detection() {
        assert_eq!(Scope::detect(&prompts::orchestrator_system(&[], "")), Some(Scope::Orchestrator));
        assert_eq!(Scope::detect(&prompts::verifier_system()), Some(Scope::Verifier));
        assert_eq!(Scope::detect(&prompts::copilot_system()), Some(Scope::SingleAgent));
        assert_eq!(
            Scope::detect(&prompts::agent_system(Domain::DataOps, "")),
            Some(Scope::Agent(Domain::DataOps))
        );
        assert_eq!(Scope::detect("hello"), None);
    }

    #[test]
    fn replies_advance_with_assistant_turns() {
        let mut b = ScriptedBehavior::with_default("fallback");
        b.push(
            Scope::Agent(Domain::Database),
            "Query: load",
            vec![
                ScriptedReply::Calls(vec![ScriptedCall { name: "load_product".into(), args: json!({}) }]),
                ScriptedReply::Final("loaded".into()),
            ],
        );
        let be = backend(b);
        let mut msgs = vec![
            ChatMessage::system(prompts::agent_system(Domain::Database, "")),
            ChatMessage::user("Query: load\nContext: none"),
        ];
        let r0 = be.reply_for(&msgs);
        assert_eq!(r0.calls()[0].name, "load_product");
        msgs.push(r0);
        msgs.push(ChatMessage::tool("call_0_0", "ok: @h1"));
        assert_eq!(be.reply_for(&msgs).content, "loaded");
        msgs.push(ChatMessage::assistant("loaded"));
        assert_eq!(be.reply_for(&msgs).content, "fallback");
    }

    #[test]
    fn scope_filters_rules() {
        let mut b = ScriptedBehavior::with_default("none");
        b.push(Scope::Agent(Domain::Map), "Query: x", vec![ScriptedReply::Final("map".into())]);
        let be = backend(b);
        let msgs = vec![
            ChatMessage::system(prompts::agent_system(Domain::Database, "")),
            ChatMessage::user("Query: x"),
        ];
        assert_eq!(be.reply_for(&msgs).content, "none");
    }

    #[test]
    fn longest_pattern_wins() {
        let mut b = ScriptedBehavior::with_default("none");
        b.push(Scope::Any, "Task: a", vec![ScriptedReply::Final("short".into())]);
        b.push(Scope::Any, "Ledger update\nTask: a", vec![ScriptedReply::Final("long".into())]);
        let be = backend(b);
        assert_eq!(be.reply_for(&[ChatMessage::user("Ledger update\nTask: a\n")]).content, "long");
        assert_eq!(be.reply_for(&[ChatMessage::user("Plan request\nTask: a\n")]).content, "short");
    }

    #[test]
    fn handle_placeholders_resolve_from_history() {
        let mut b = ScriptedBehavior::with_default("none");
        b.push(
            Scope::Any,
            "go",
            vec![ScriptedReply::Calls(vec![ScriptedCall {
                name: "reforest".into(),
                args: json!({"canopy": "$handle~1", "loss": "$handle", "other": "$handle~5"}),
            }])],
        );
        let be = backend(b);
        let msgs = vec![ChatMessage::user("go; handles @h1 and @h2, again @h1")];
        let reply = be.reply_for(&msgs);
        let call = &reply.calls()[0];
        let args: Value = serde_json::from_str(&call.arguments).unwrap();
        assert_eq!(args["canopy"], "@h1");
        assert_eq!(args["loss"], "@h2");
        assert_eq!(args["other"], "$handle~5");
    }

    #[test]
    fn scan_handles_edge_cases() {
        assert_eq!(scan_handles("@h12,@h3 @hx @h"), vec!["@h12", "@h3"]);
        assert!(scan_handles("").is_empty());
    }

    #[test]
    fn playback_is_referentially_transparent() {
        let mut b = ScriptedBehavior::with_default("d");
        b.push(Scope::Any, "q", vec![ScriptedReply::Final("a".into())]);
        let be = backend(b);
        let msgs = vec![ChatMessage::user("q")];
        assert_eq!(be.reply_for(&msgs), be.reply_for(&msgs));
    }
}
