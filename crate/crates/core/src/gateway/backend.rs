//! Transport backends: a chat-completion HTTP client and a scripted stub.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::artifacts::Frame;

/// One request as the transport sees it.
#[derive(Debug, Clone)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub system: &'a str,
    pub text: &'a str,
    pub frames: &'a [Frame],
    /// Routing hint for scripted backends; never sent over the wire.
    pub case_id: Option<&'a str>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Auth(_) | BackendError::Malformed(_) => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, req: &ChatRequest<'_>) -> Result<String, BackendError>;
}

/// OpenAI-compatible `chat/completions` client.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.to_string(),
            api_key,
        })
    }
}

/// JSON body for a chat-completion call with inline base64 image parts.
pub fn chat_body(req: &ChatRequest<'_>) -> Value {
    let mut content = vec![json!({"type": "text", "text": req.text})];
    for frame in req.frames {
        let data = base64::engine::general_purpose::STANDARD.encode(&frame.bytes);
        content.push(json!({
            "type": "image_url",
            "image_url": {"url": format!("data:{};base64,{data}", frame.mime_type())}
        }));
    }
    let mut messages = Vec::new();
    if !req.system.is_empty() {
        messages.push(json!({"role": "system", "content": req.system}));
    }
    messages.push(json!({"role": "user", "content": content}));
    json!({
        "model": req.model,
        "temperature": 0,
        "messages": messages,
    })
}

impl ChatBackend for HttpBackend {
    fn send(&self, req: &ChatRequest<'_>) -> Result<String, BackendError> {
        let mut builder = self.client.post(&self.endpoint).json(&chat_body(req));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = builder
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            401 | 403 => return Err(BackendError::Auth(body)),
            _ => return Err(BackendError::Status { status, body }),
        }
        let v: Value = serde_json::from_str(&body).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let content = &v["choices"][0]["message"]["content"];
        match content {
            Value::String(s) => Ok(s.clone()),
            // Some providers return content as a list of typed parts.
            Value::Array(parts) => Ok(parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join("")),
            _ => Err(BackendError::Malformed("no choices[0].message.content".into())),
        }
    }
}

/// A scripted reply rule. A rule matches when every given selector matches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    /// Substring of the user text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub reply: String,
}

/// Scripted answers file accepted by `--stub-gateway`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubScript {
    #[serde(default)]
    pub rules: Vec<StubRule>,
    /// Reply when no rule matches; a missing default is a transport error.
    #[serde(default)]
    pub default: Option<String>,
}

impl StubScript {
    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }

    fn reply_for(&self, req: &ChatRequest<'_>) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| {
                r.case_id.as_deref().is_none_or(|c| Some(c) == req.case_id)
                    && r.contains.as_deref().is_none_or(|s| req.text.contains(s))
            })
            .map(|r| r.reply.as_str())
            .or(self.default.as_deref())
    }
}

enum StubMode {
    Fixed(String),
    Echo,
    Sequence(Mutex<VecDeque<String>>),
    Script(StubScript),
    Fail(BackendError),
}

/// In-process backend for tests and offline fixture runs.
pub struct StubBackend {
    mode: StubMode,
    calls: AtomicUsize,
}

impl StubBackend {
    fn with(mode: StubMode) -> Self {
        Self {
            mode,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::with(StubMode::Fixed(reply.into()))
    }

    /// Returns the user text unchanged.
    pub fn echo() -> Self {
        Self::with(StubMode::Echo)
    }

    /// Replies in order; errors once exhausted.
    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with(StubMode::Sequence(Mutex::new(
            replies.into_iter().map(Into::into).collect(),
        )))
    }

    pub fn script(script: StubScript) -> Self {
        Self::with(StubMode::Script(script))
    }

    pub fn failing(err: BackendError) -> Self {
        Self::with(StubMode::Fail(err))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for StubBackend {
    fn send(&self, req: &ChatRequest<'_>) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match &self.mode {
            StubMode::Fixed(s) => Ok(s.clone()),
            StubMode::Echo => Ok(req.text.to_string()),
            StubMode::Sequence(q) => q
                .lock()
                .unwrap()
                .pop_front()
                .ok_or_else(|| BackendError::Transport("stub sequence exhausted".into())),
            StubMode::Script(s) => s
                .reply_for(req)
                .map(str::to_string)
                .ok_or_else(|| BackendError::Transport("no stub rule matches request".into())),
            StubMode::Fail(e) => Err(e.clone()),
        }
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn send(&self, req: &ChatRequest<'_>) -> Result<String, BackendError> {
        (**self).send(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req<'a>(text: &'a str, case_id: Option<&'a str>, frames: &'a [Frame]) -> ChatRequest<'a> {
        ChatRequest {
            model: "m",
            system: "sys",
            text,
            frames,
            case_id,
        }
    }

    #[test]
    fn body_shape() {
        let frames = [Frame::new("f0.png", vec![1, 2, 3])];
        let body = chat_body(&req("hello", None, &frames));
        assert_eq!(body["temperature"], 0);
        assert_eq!(body["messages"][0]["role"], "system");
        let parts = body["messages"][1]["content"].as_array().unwrap();
        assert_eq!(parts[0]["text"], "hello");
        assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AQID");
    }

    #[test]
    fn script_rules_in_order() {
        let script = StubScript {
            rules: vec![
                StubRule {
                    case_id: Some("c1".into()),
                    contains: Some("tail".into()),
                    reply: "A".into(),
                },
                StubRule {
                    case_id: None,
                    contains: Some("tail".into()),
                    reply: "B".into(),
                },
            ],
            default: Some("D".into()),
        };
        let stub = StubBackend::script(script);
        assert_eq!(stub.send(&req("the tail", Some("c1"), &[])).unwrap(), "A");
        assert_eq!(stub.send(&req("the tail", Some("c2"), &[])).unwrap(), "B");
        assert_eq!(stub.send(&req("the head", Some("c1"), &[])).unwrap(), "D");
        assert_eq!(stub.calls(), 3);
    }

    #[test]
    fn retry_classes() {
        assert!(BackendError::Transport("x".into()).is_retryable());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_retryable());
        assert!(!BackendError::Status { status: 400, body: String::new() }.is_retryable());
        assert!(!BackendError::Auth("x".into()).is_retryable());
    }
}
