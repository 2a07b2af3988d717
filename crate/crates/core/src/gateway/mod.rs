//! Uniform chat-completion access for every LLM-backed role in the pipeline.
//!
//! All network traffic in the crate goes through this module. Two backend kinds exist:
//! a remote OpenAI-style chat-completions endpoint, and a scripted backend that replays a
//! transcript keyed by request fingerprint. Anything else (test doubles, recorders) plugs in
//! through [`ChatBackend`].

mod http;
mod scripted;

use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpJsonClient, RemoteBackend};
pub use scripted::{FnBackend, Recorder, ScriptedBackend, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("no scripted reply registered for fingerprint {fingerprint}")]
    TranscriptMiss { fingerprint: String },
    #[error("scripted transcript holds {available} replies for {fingerprint}, {requested} requested")]
    TranscriptShort {
        fingerprint: String,
        available: usize,
        requested: usize,
    },
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("transcript i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn is_timeout(&self) -> bool {
        match self {
            GatewayError::Timeout(_) => true,
            GatewayError::RetriesExhausted { last, .. } => last.starts_with("timeout"),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            seed: None,
            max_tokens: 1024,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} must be a finite value >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role == Role::System && i != 0 {
                return Err(GatewayError::InvalidRequest(
                    "system message must come first".into(),
                ));
            }
            if m.role != Role::Assistant && m.content.trim().is_empty() {
                return Err(GatewayError::InvalidRequest(format!(
                    "{} message {i} is empty",
                    m.role.as_str()
                )));
            }
        }
        Ok(())
    }
}

/// Stable hash of `(model_id, messages, temperature, seed)`.
///
/// Line endings are normalized to `\n` before hashing; everything else is hashed verbatim.
pub fn fingerprint(model_id: &str, req: &CompletionRequest) -> String {
    let messages: Vec<[String; 2]> = req
        .messages
        .iter()
        .map(|m| [m.role.as_str().to_string(), m.content.replace("\r\n", "\n")])
        .collect();
    let canonical = serde_json::json!({
        "model": model_id,
        "messages": messages,
        "temperature": format!("{}", req.temperature),
        "seed": req.seed,
    });
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

/// A completion provider. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, model_id: &str, req: &CompletionRequest) -> Result<String, GatewayError>;

    /// `n` independent completions of the same request.
    fn sample_n(
        &self,
        model_id: &str,
        req: &CompletionRequest,
        n: usize,
    ) -> Result<Vec<String>, GatewayError> {
        (0..n).map(|_| self.complete(model_id, req)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
}

fn default_retry_limit() -> u32 {
    3
}

fn default_timeout_secs() -> f64 {
    60.0
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_max_tokens() -> u32 {
    1024
}

/// Named backend configuration for one role (user-proxy, assistant, voter, judge, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Name of the environment variable holding the API key. Keys never live in config files.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Transcript file for the scripted kind.
    #[serde(default)]
    pub transcript: Option<PathBuf>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

impl BackendConfig {
    pub fn scripted(model_id: impl Into<String>, transcript: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_id: model_id.into(),
            retry_limit: default_retry_limit(),
            timeout_secs: default_timeout_secs(),
            backoff_ms: default_backoff_ms(),
            api_key_env: None,
            transcript: Some(transcript.into()),
            temperature: None,
            max_tokens: default_max_tokens(),
        }
    }

    pub fn remote(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint: Some(endpoint.into()),
            transcript: None,
            ..Self::scripted(model_id, PathBuf::new())
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model_id must be non-empty".into()));
        }
        if self.retry_limit > 10 {
            return Err(GatewayError::Config(format!(
                "retry_limit {} exceeds 10",
                self.retry_limit
            )));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(GatewayError::Config("timeout_secs must be positive".into()));
        }
        match self.kind {
            BackendKind::Remote if self.endpoint.as_deref().is_none_or(str::is_empty) => Err(
                GatewayError::Config("remote backend requires an endpoint".into()),
            ),
            BackendKind::Scripted if self.transcript.is_none() => Err(GatewayError::Config(
                "scripted backend requires a transcript file".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Resolve relative transcript paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(t) = &self.transcript {
            if t.is_relative() {
                self.transcript = Some(base.join(t));
            }
        }
    }
}

/// Global cap on in-flight requests across all clients sharing it.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn in_flight(&self) -> usize {
        *self.active.lock().expect("limiter poisoned")
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().expect("limiter poisoned");
        while *active >= self.max {
            active = self.freed.wait(active).expect("limiter poisoned");
        }
        *active += 1;
        Permit { limiter: self }
    }
}

impl Default for InFlightLimiter {
    fn default() -> Self {
        Self::new(8)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.limiter.active.lock().expect("limiter poisoned");
        *active -= 1;
        self.limiter.freed.notify_one();
    }
}

/// A configured model handle: backend + model id + sampling defaults + shared in-flight limit.
#[derive(Clone)]
pub struct LlmClient {
    model_id: String,
    temperature: f64,
    max_tokens: u32,
    backend: Arc<dyn ChatBackend>,
    limiter: Arc<InFlightLimiter>,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("model_id", &self.model_id)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn new(model_id: impl Into<String>, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            model_id: model_id.into(),
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            backend,
            limiter: Arc::new(InFlightLimiter::default()),
        }
    }

    /// Build from a config. `default_temperature` applies when the config leaves it unset.
    pub fn from_config(
        cfg: &BackendConfig,
        default_temperature: f64,
        limiter: Arc<InFlightLimiter>,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let backend: Arc<dyn ChatBackend> = match cfg.kind {
            BackendKind::Scripted => {
                let path = cfg.transcript.as_ref().expect("validated");
                Arc::new(ScriptedBackend::new(Transcript::load(path)?))
            }
            BackendKind::Remote => Arc::new(RemoteBackend::from_config(cfg)?),
        };
        Ok(Self::from_parts(cfg, default_temperature, backend).with_limiter(limiter))
    }

    /// Sampling settings from `cfg`, requests served by `backend`.
    pub fn from_parts(cfg: &BackendConfig, default_temperature: f64, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature.unwrap_or(default_temperature),
            max_tokens: cfg.max_tokens,
            backend,
            limiter: Arc::new(InFlightLimiter::default()),
        }
    }

    pub fn scripted(model_id: impl Into<String>, transcript: Transcript) -> Self {
        Self::new(model_id, Arc::new(ScriptedBackend::new(transcript)))
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<InFlightLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// A request carrying this client's sampling defaults.
    pub fn request(&self, messages: Vec<ChatMessage>, seed: u64) -> CompletionRequest {
        CompletionRequest {
            messages,
            temperature: self.temperature,
            seed: Some(seed),
            max_tokens: self.max_tokens,
        }
    }

    pub fn fingerprint(&self, req: &CompletionRequest) -> String {
        fingerprint(&self.model_id, req)
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let _permit = self.limiter.acquire();
        self.backend.complete(&self.model_id, req)
    }

    pub fn sample_n(&self, req: &CompletionRequest, n: usize) -> Result<Vec<String>, GatewayError> {
        if n == 0 {
            return Err(GatewayError::InvalidRequest("n must be at least 1".into()));
        }
        req.validate()?;
        let _permit = self.limiter.acquire();
        let out = self.backend.sample_n(&self.model_id, req, n)?;
        if out.len() != n {
            return Err(GatewayError::Protocol(format!(
                "backend returned {} samples, {n} requested",
                out.len()
            )));
        }
        Ok(out)
    }
}
