//! Chat-completions client for live models.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, BackendKind, BackendReply, ChatBackend, ChatMessage, Role, ToolCallRequest};
use crate::types::{ParamKind, ToolSpec, Usage};

pub const API_KEY_ENV: &str = "GEOSQUAD_API_KEY";
const MAX_ATTEMPTS: u32 = 3;
const BACKOFF_START_MS: u64 = 500;

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> GatePass<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        let mut free = self.0.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: BackendConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
    backoff: Duration,
}

impl HttpBackend {
    /// Reads the bearer token from `GEOSQUAD_API_KEY`.
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        HttpBackend::with_key(config, key)
    }

    pub fn with_key(config: BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        if config.kind != BackendKind::Http {
            return Err(BackendError::Config("HttpBackend needs kind = http".into()));
        }
        config.validate()?;
        let url = chat_url(config.endpoint.as_deref().unwrap_or_default());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let gate = Gate::new(config.max_in_flight);
        Ok(HttpBackend { config, url, api_key, client, gate, backoff: Duration::from_millis(BACKOFF_START_MS) })
    }

    /// Shortens the retry backoff; used by tests against a local mock.
    pub fn with_backoff(mut self, start: Duration) -> Self {
        self.backoff = start;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn request_body(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": messages.iter().map(wire_message).collect::<Vec<_>>(),
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_completion_tokens,
        });
        if !tools.is_empty() {
            body["tools"] = Value::Array(tools.iter().map(wire_tool).collect());
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(k) = &self.api_key {
            req = req.bearer_auth(k);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(BackendError::Transport(e.to_string())))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(BackendError::Transport(e.to_string())))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(BackendError::Transport(format!("HTTP {status}: {}", snippet(&text)))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(BackendError::Protocol(format!("HTTP {status}: {}", snippet(&text)))));
        }
        serde_json::from_str(&text).map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("bad JSON: {e}"))))
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl ChatBackend for HttpBackend {
    fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn respond(&self, messages: &[ChatMessage], tools: &[ToolSpec]) -> Result<BackendReply, BackendError> {
        let body = self.request_body(messages, tools);
        let _pass = self.gate.acquire();
        let mut delay = self.backoff;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 1..=MAX_ATTEMPTS {
            match self.send_once(&body) {
                Ok(v) => return parse_response(&v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    last = e;
                    if attempt < MAX_ATTEMPTS {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last)
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(200).collect()
}

/// Appends `/chat/completions` unless the endpoint already names it.
pub fn chat_url(endpoint: &str) -> String {
    let e = endpoint.trim_end_matches('/');
    if e.ends_with("/chat/completions") {
        e.to_string()
    } else {
        format!("{e}/chat/completions")
    }
}

fn json_type(kind: ParamKind) -> &'static str {
    match kind {
        ParamKind::Number => "number",
        ParamKind::Integer => "integer",
        ParamKind::Boolean => "boolean",
        _ => "string",
    }
}

pub fn wire_tool(t: &ToolSpec) -> Value {
    let mut props = serde_json::Map::new();
    for p in &t.params {
        props.insert(p.name.clone(), json!({"type": json_type(p.kind), "description": p.kind.key()}));
    }
    let required: Vec<&str> = t.params.iter().filter(|p| p.required).map(|p| p.name.as_str()).collect();
    json!({
        "type": "function",
        "function": {
            "name": t.qualified_name(),
            "description": t.description,
            "parameters": {"type": "object", "properties": props, "required": required},
        }
    })
}

fn wire_message(m: &ChatMessage) -> Value {
    let role = match m.role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Tool => "tool",
    };
    let mut v = json!({"role": role, "content": m.content});
    if !m.calls().is_empty() {
        v["tool_calls"] = Value::Array(
            m.calls()
                .iter()
                .map(|c| json!({"id": c.id, "type": "function", "function": {"name": c.name, "arguments": c.arguments}}))
                .collect(),
        );
    }
    if let Some(id) = &m.tool_call_id {
        v["tool_call_id"] = json!(id);
    }
    v
}

pub fn parse_response(v: &Value) -> Result<BackendReply, BackendError> {
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Protocol("response has no choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let mut calls = Vec::new();
    if let Some(arr) = msg.get("tool_calls").and_then(Value::as_array) {
        for (i, c) in arr.iter().enumerate() {
            let f = c.get("function").ok_or_else(|| BackendError::Protocol("tool call without function".into()))?;
            let name = f
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::Protocol("tool call without name".into()))?;
            let arguments = match f.get("arguments") {
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
                None => "{}".to_string(),
            };
            let id = c.get("id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("call_{i}"));
            calls.push(ToolCallRequest { id, name: name.to_string(), arguments });
        }
    }
    let message = if calls.is_empty() {
        ChatMessage::assistant(content)
    } else {
        ChatMessage::assistant_calls(content, calls)
    };
    let reported = v.get("usage").and_then(|u| {
        let p = u.get("prompt_tokens")?.as_u64()?;
        let c = u.get("completion_tokens")?.as_u64()?;
        Some(Usage::new(p, c))
    });
    Ok(BackendReply { message, reported })
}
