//! Chat-completion client used by the external analysis and generation
//! backends, plus a scripted stub for offline runs.

use std::collections::VecDeque;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub const ANALYZE_PROMPT: &str = include_str!("../prompts/analyze_trajectory.txt");
pub const PERTURB_PROMPT: &str = include_str!("../prompts/perturb_object.txt");
/// Substitution slot in [`PERTURB_PROMPT`].
pub const ANALYSIS_SLOT: &str = "[analysis from F]";

pub const ENV_URL: &str = "CURRICULA_LLM_URL";
pub const ENV_KEY: &str = "CURRICULA_LLM_KEY";
pub const ENV_MODEL: &str = "CURRICULA_LLM_MODEL";

/// The perturbation prompt with the analysis text substituted.
pub fn perturb_prompt(analysis_text: &str) -> String {
    PERTURB_PROMPT.replacen(ANALYSIS_SLOT, analysis_text, 1)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend rejected credentials: {0}")]
    Auth(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlmRequest {
    /// Extra context sent as a system message.
    pub system: Option<String>,
    pub prompt: String,
    /// PNG bytes attached as an image part.
    pub image_png: Option<Vec<u8>>,
    /// Tool definition in the flat `{type, name, description, parameters}` form.
    pub tool: Option<Value>,
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<String, BackendError>;
}

/// Replays canned replies in order and records every request.
#[derive(Debug, Default)]
pub struct StubBackend {
    replies: Mutex<VecDeque<String>>,
    repeat_last: bool,
    requests: Mutex<Vec<LlmRequest>>,
}

impl StubBackend {
    /// Always answers with `reply`.
    pub fn fixed(reply: impl Into<String>) -> Self {
        StubBackend {
            replies: Mutex::new(VecDeque::from([reply.into()])),
            repeat_last: true,
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Answers with each reply once, then reports itself unavailable.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        StubBackend {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            repeat_last: false,
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.requests.lock().expect("stub lock").clone()
    }
}

impl LlmBackend for StubBackend {
    fn complete(&self, req: &LlmRequest) -> Result<String, BackendError> {
        self.requests.lock().expect("stub lock").push(req.clone());
        let mut q = self.replies.lock().expect("stub lock");
        if self.repeat_last && q.len() == 1 {
            return Ok(q[0].clone());
        }
        q.pop_front()
            .ok_or_else(|| BackendError::Unavailable("stub has no replies left".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpConfig {
    pub url: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub audit_log: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url: "https://api.openai.com/v1/chat/completions".into(),
            api_key: None,
            model: "gpt-4.1-mini".into(),
            temperature: 0.0,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 500,
            max_in_flight: 4,
            audit_log: None,
        }
    }
}

impl HttpConfig {
    /// Reads endpoint, credential and model from the environment.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_URL)
            .map_err(|_| BackendError::Unavailable(format!("{ENV_URL} is not set")))?;
        let mut cfg = HttpConfig {
            url,
            api_key: std::env::var(ENV_KEY).ok(),
            ..HttpConfig::default()
        };
        if let Ok(m) = std::env::var(ENV_MODEL) {
            cfg.model = m;
        }
        Ok(cfg)
    }
}

struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut busy = self.busy.lock().expect("gate lock");
        while *busy >= self.limit {
            busy = self.freed.wait(busy).expect("gate lock");
        }
        *busy += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
    retries: AtomicU64,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let limit = cfg.max_in_flight.max(1);
        HttpBackend {
            cfg,
            agent,
            gate: Gate {
                busy: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
            retries: AtomicU64::new(0),
        }
    }

    pub fn from_env() -> Result<Self, BackendError> {
        Ok(Self::new(HttpConfig::from_env()?))
    }

    /// Retries issued since construction.
    pub fn retry_count(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn request_body(&self, req: &LlmRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(sys) = &req.system {
            messages.push(json!({"role": "system", "content": sys}));
        }
        let mut parts = vec![json!({"type": "text", "text": req.prompt})];
        if let Some(png) = &req.image_png {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        messages.push(json!({"role": "user", "content": parts}));
        let mut body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": messages,
        });
        if let Some(tool) = &req.tool {
            let name = tool.get("name").cloned().unwrap_or(Value::Null);
            body["tools"] = json!([chat_tool(tool)]);
            body["tool_choice"] = json!({"type": "function", "function": {"name": name}});
        }
        body
    }

    fn redact(&self, text: &str) -> String {
        match &self.cfg.api_key {
            Some(k) if !k.is_empty() => text.replace(k.as_str(), "[redacted]"),
            _ => text.to_string(),
        }
    }

    fn audit(&self, request: &str, status: Option<u16>, response: &str) {
        let request = self.redact(request);
        let response = self.redact(response);
        log::debug!("llm request={request} status={status:?} response={response}");
        if let Some(path) = &self.cfg.audit_log {
            let line = json!({"request": request, "status": status, "response": response});
            if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
                let _ = writeln!(f, "{line}");
            }
        }
    }
}

/// Wrap a flat tool definition in the chat-completions `function` envelope.
pub fn chat_tool(tool: &Value) -> Value {
    json!({
        "type": "function",
        "function": {
            "name": tool.get("name").cloned().unwrap_or(Value::Null),
            "description": tool.get("description").cloned().unwrap_or(Value::Null),
            "parameters": tool.get("parameters").cloned().unwrap_or(Value::Null),
        }
    })
}

/// Tool-call arguments when present, else the message content, else the raw body.
pub fn extract_reply(body: &str) -> String {
    let Ok(v) = serde_json::from_str::<Value>(body) else {
        return body.to_string();
    };
    let msg = &v["choices"][0]["message"];
    if let Some(args) = msg["tool_calls"][0]["function"]["arguments"].as_str() {
        return args.to_string();
    }
    if let Some(content) = msg["content"].as_str() {
        return content.to_string();
    }
    body.to_string()
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &LlmRequest) -> Result<String, BackendError> {
        let _slot = self.gate.enter();
        let body = self.request_body(req).to_string();
        let attempts = self.cfg.max_attempts.max(1);
        let mut last_err = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                log::warn!("llm retry {} of {} after: {last_err}", attempt - 1, attempts - 1);
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut call = self
                .agent
                .post(&self.cfg.url)
                .header("Content-Type", "application/json");
            if let Some(key) = &self.cfg.api_key {
                call = call.header("Authorization", format!("Bearer {key}"));
            }
            match call.send(body.as_str()) {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let text = resp.body_mut().read_to_string().unwrap_or_default();
                    self.audit(&body, Some(status), &text);
                    match status {
                        200..=299 => return Ok(extract_reply(&text)),
                        401 | 403 => return Err(BackendError::Auth(format!("HTTP {status}"))),
                        429 | 500..=599 => last_err = format!("HTTP {status}"),
                        _ => return Err(BackendError::Unavailable(format!("HTTP {status}"))),
                    }
                }
                Err(e) => {
                    self.audit(&body, None, &e.to_string());
                    last_err = e.to_string();
                }
            }
        }
        Err(BackendError::Unavailable(format!(
            "{attempts} attempts failed, last: {last_err}"
        )))
    }
}
