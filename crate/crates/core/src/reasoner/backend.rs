use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use base64::Engine as _;
use serde_json::{json, Value};
use thiserror::Error;

use super::prompt::Prompt;

/// Length of one perceive → reason → act cycle.
pub const CYCLE_BUDGET: Duration = Duration::from_millis(1500);

/// Remote calls are cut off here at the latest, leaving part of the cycle for
/// localization and motion.
pub const MAX_REMOTE_TIMEOUT: Duration = Duration::from_millis(1400);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("no scripted response for cycle {0}")]
    NoResponse(usize),
    #[error("backend deadline of {0:?} exceeded")]
    Timeout(Duration),
    #[error("transport: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response payload: {0}")]
    Malformed(String),
}

pub trait Backend {
    /// Raw response text for the prompt of cycle `t`.
    fn query(&mut self, t: usize, prompt: &Prompt) -> Result<String, BackendError>;
}

/// Canned responses keyed by cycle index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedBackend {
    responses: BTreeMap<usize, String>,
}

impl ScriptedBackend {
    pub fn new(responses: BTreeMap<usize, String>) -> Self {
        Self { responses }
    }
}

impl Backend for ScriptedBackend {
    fn query(&mut self, t: usize, _prompt: &Prompt) -> Result<String, BackendError> {
        self.responses.get(&t).cloned().ok_or(BackendError::NoResponse(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    /// Full URL of a chat-completions endpoint.
    pub endpoint: String,
    pub token: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_tokens: u32,
    /// Image references that are not URLs are resolved against this directory
    /// and sent inline as base64 data URLs.
    pub image_root: Option<PathBuf>,
}

impl RemoteConfig {
    pub fn effective_timeout(&self) -> Duration {
        self.timeout.min(MAX_REMOTE_TIMEOUT)
    }
}

/// Chat-completions request body: one user message holding the text prompt
/// and, when available, the marked image.
pub fn request_body(model: &str, max_tokens: u32, text: &str, image_url: Option<&str>) -> Value {
    let mut content = vec![json!({"type": "text", "text": text})];
    if let Some(url) = image_url {
        content.push(json!({"type": "image_url", "image_url": {"url": url}}));
    }
    json!({
        "model": model,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": max_tokens,
        "temperature": 0.0,
    })
}

fn extract_content(payload: &Value) -> Result<String, BackendError> {
    payload
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))
}

fn mime_for(path: &std::path::Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.effective_timeout())
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    /// URL for the image part: remote and data URLs pass through, files are
    /// inlined. The `#marked` suffix names the annotated rendition, which is
    /// looked up as `<stem>.marked.<ext>` next to the raw frame first.
    fn image_url(&self, reference: &str) -> Option<String> {
        if ["http://", "https://", "data:"].iter().any(|p| reference.starts_with(p)) {
            return Some(reference.to_string());
        }
        let root = self.config.image_root.as_ref()?;
        let (raw, marked) = match reference.strip_suffix("#marked") {
            Some(r) => (r, true),
            None => (reference, false),
        };
        let raw_path = root.join(raw);
        let mut candidates = Vec::new();
        if marked {
            let ext = raw_path.extension().and_then(|e| e.to_str()).unwrap_or("png");
            candidates.push(raw_path.with_extension(format!("marked.{ext}")));
        }
        candidates.push(raw_path);
        let path = candidates.into_iter().find(|p| p.is_file())?;
        match std::fs::read(&path) {
            Ok(bytes) => Some(format!(
                "data:{};base64,{}",
                mime_for(&path),
                base64::engine::general_purpose::STANDARD.encode(bytes)
            )),
            Err(e) => {
                log::warn!("cannot read image {}: {e}", path.display());
                None
            }
        }
    }
}

impl Backend for RemoteBackend {
    fn query(&mut self, _t: usize, prompt: &Prompt) -> Result<String, BackendError> {
        let deadline = self.config.effective_timeout();
        if deadline.is_zero() {
            return Err(BackendError::Timeout(deadline));
        }
        let image = self.image_url(&prompt.image);
        if image.is_none() {
            log::debug!("sending cycle without an image attachment ({})", prompt.image);
        }
        let body = request_body(&self.config.model, self.config.max_tokens, &prompt.text, image.as_deref());
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.config.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(deadline)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(BackendError::Status(resp.status().as_u16()));
        }
        let payload: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(deadline)
            } else {
                BackendError::Malformed(e.to_string())
            }
        })?;
        extract_content(&payload)
    }
}
