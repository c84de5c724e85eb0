//! Chat-completion client: wire types, HTTP transport, retries and the
//! on-disk response cache.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::AugmentError;
use crate::jsonl;

pub const DEFAULT_API_KEY_ENV: &str = "FINSTS_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    pub timeout_secs: u64,
    /// Maximum in-flight requests while building a dataset.
    pub concurrency: usize,
    pub cache_path: Option<PathBuf>,
    /// Forbid network access; every request must hit the cache.
    pub offline: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            temperature: 0.7,
            max_tokens: 256,
            max_retries: 3,
            backoff_base_ms: 1000,
            backoff_factor: 2.0,
            timeout_secs: 60,
            concurrency: 4,
            cache_path: None,
            offline: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of a `POST {base_url}/chat/completions` request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64, max_tokens: u32) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature,
            max_tokens,
        }
    }

    /// Stable hash of the serialized request, used as the cache key.
    pub fn cache_key(&self) -> String {
        let body = serde_json::to_string(self).expect("serializable request");
        hex::encode(Sha256::digest(body.as_bytes()))
    }
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Extracts `choices[0].message.content` from a response body.
pub fn parse_chat_response(body: &str) -> Result<String, TransportError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| TransportError::Malformed(format!("unparsable completion: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| TransportError::Malformed("completion has no choices[0].message.content".into()))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    /// Connection-level failure; retried.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("{0}")]
    Malformed(String),
    #[error("offline mode: no cached completion for request {0}")]
    CacheMiss(String),
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        match self {
            TransportError::Transport(_) => true,
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Something that turns a chat request into the raw completion text.
pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

impl<T: ChatTransport + ?Sized> ChatTransport for Box<T> {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).send(request)
    }
}

/// Blocking HTTP transport for OpenAI-compatible endpoints.
pub struct HttpChatTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpChatTransport {
    pub fn new(cfg: &LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChatTransport {
            agent,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            api_key: std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

impl ChatTransport for HttpChatTransport {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_string(request).expect("serializable request");
        let mut resp = req.send(body.as_bytes()).map_err(|e| TransportError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(TransportError::Status { status, body: text });
        }
        parse_chat_response(&text)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    content: String,
}

/// Wraps a transport with a JSON Lines response cache keyed by request hash.
pub struct CachedTransport<T> {
    inner: Option<T>,
    path: Option<PathBuf>,
    entries: Mutex<HashMap<String, String>>,
}

impl<T: ChatTransport> CachedTransport<T> {
    /// `inner = None` means offline: only cached responses are served.
    pub fn open(inner: Option<T>, path: Option<&Path>) -> Result<Self, AugmentError> {
        let mut entries = HashMap::new();
        if let Some(p) = path {
            if p.exists() {
                for e in jsonl::read::<CacheEntry>(p)? {
                    entries.insert(e.key, e.content);
                }
            }
        }
        Ok(CachedTransport { inner, path: path.map(Path::to_path_buf), entries: Mutex::new(entries) })
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a response, persisting it when the cache is file-backed.
    pub fn insert(&self, key: String, content: String) -> Result<(), TransportError> {
        let mut entries = self.entries.lock().unwrap();
        if let Some(p) = &self.path {
            let line = serde_json::to_string(&CacheEntry { key: key.clone(), content: content.clone() })
                .expect("serializable cache entry");
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| TransportError::Transport(format!("cache write {}: {e}", p.display())))?;
            writeln!(f, "{line}").map_err(|e| TransportError::Transport(format!("cache write: {e}")))?;
        }
        entries.insert(key, content);
        Ok(())
    }
}

impl<T: ChatTransport> ChatTransport for CachedTransport<T> {
    fn send(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let key = request.cache_key();
        if let Some(hit) = self.entries.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let Some(inner) = &self.inner else {
            return Err(TransportError::CacheMiss(key));
        };
        let content = inner.send(request)?;
        self.insert(key, content.clone())?;
        Ok(content)
    }
}

/// Chat-completion client with retry, backoff and answer cleanup.
pub struct ChatClient {
    transport: Box<dyn ChatTransport>,
    cfg: LlmConfig,
}

impl ChatClient {
    pub fn new(transport: Box<dyn ChatTransport>, cfg: LlmConfig) -> Self {
        ChatClient { transport, cfg }
    }

    /// HTTP transport behind the configured cache; no network when offline.
    pub fn from_config(cfg: LlmConfig) -> Result<Self, AugmentError> {
        let inner = (!cfg.offline).then(|| HttpChatTransport::new(&cfg));
        if cfg.offline && cfg.cache_path.is_none() {
            return Err(AugmentError::Config("offline mode requires an LLM cache_path".into()));
        }
        let cached = CachedTransport::open(inner, cfg.cache_path.as_deref())?;
        Ok(ChatClient::new(Box::new(cached), cfg))
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    pub fn model(&self) -> &str {
        &self.cfg.model
    }

    pub fn chat_complete(&self, prompt: &str) -> Result<String, AugmentError> {
        self.chat_complete_at(prompt, self.cfg.temperature)
    }

    /// Sends `prompt` as a single user message at `temperature`.
    pub fn chat_complete_at(&self, prompt: &str, temperature: f64) -> Result<String, AugmentError> {
        let request = ChatRequest::user(&self.cfg.model, prompt, temperature, self.cfg.max_tokens);
        let mut attempt = 0u32;
        loop {
            match self.transport.send(&request) {
                Ok(raw) => {
                    let text = clean_completion(&raw);
                    return if text.is_empty() { Err(AugmentError::EmptyCompletion) } else { Ok(text) };
                }
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = self.cfg.backoff_base_ms as f64 * self.cfg.backoff_factor.powi(attempt as i32);
                    log::warn!("completion attempt {} failed ({e}); retrying in {wait:.0} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(wait as u64));
                    attempt += 1;
                }
                Err(e) => return Err(AugmentError::Transport { attempts: attempt + 1, source: e }),
            }
        }
    }
}

/// Trims whitespace and any echoed "Expected answer:" prefix.
pub fn clean_completion(raw: &str) -> String {
    let mut text = raw.trim();
    const PREFIX: &str = "expected answer:";
    if text.len() >= PREFIX.len() && text.is_char_boundary(PREFIX.len()) && text[..PREFIX.len()].eq_ignore_ascii_case(PREFIX) {
        text = text[PREFIX.len()..].trim();
    }
    text.to_string()
}
