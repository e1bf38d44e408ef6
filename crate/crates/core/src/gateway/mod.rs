//! Backend-agnostic chat generation.
//!
//! Every pipeline role talks to a [`Gateway`], which validates requests and
//! forwards them to one of three backends: a remote chat-completions
//! endpoint, a scripted replay table keyed by request fingerprint, or the
//! offline rule-based heuristic.

mod heuristic;
mod remote;
mod scripted;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use heuristic::{analyze, heuristic_verdict, HeuristicBackend, HeuristicVerdict, Rule};
pub use remote::{HttpReply, HttpTransport, RemoteBackend, Transport, TransportError};
pub use scripted::{RecordingBackend, Script, ScriptEntry, ScriptedBackend, SCRIPT_FORMAT_VERSION};

pub const DEFAULT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("backend returned HTTP {0}")]
    HttpStatus(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no scripted response for fingerprint {0}")]
    MissingScript(String),
    #[error("API key environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("heuristic backend needs non-empty contract text")]
    EmptyInput,
    #[error("script file {}: {message}", path.display())]
    Script { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        match self.messages.last() {
            None => return invalid("request has no messages"),
            Some(m) if m.role != ChatRole::User => {
                return invalid("last message must have role user")
            }
            _ => {}
        }
        if self
            .messages
            .iter()
            .any(|m| m.role != ChatRole::Assistant && m.content.is_empty())
        {
            return invalid("system and user messages must be non-empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return invalid("temperature must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Stable identity of the logical request: SHA-256 over a canonical JSON
    /// encoding of the messages, temperature and seed. `max_tokens` is
    /// deliberately not part of it.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            messages: &'a [ChatMessage],
            temperature: f64,
            seed: Option<u64>,
        }
        let canonical = serde_json::to_vec(&Canonical {
            messages: &self.messages,
            temperature: self.temperature,
            seed: self.seed,
        })
        .expect("canonical request encoding is infallible");
        let digest = Sha256::digest(&canonical);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        format!("sha256:{hex}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend_id: String,
    #[serde(default)]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
    Heuristic,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(Self::Remote),
            "scripted" => Ok(Self::Scripted),
            "heuristic" => Ok(Self::Heuristic),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    500
}
fn default_max_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the bearer token. The key
    /// itself is never read from configuration files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env_var: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script_path: Option<PathBuf>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn new(kind: BackendKind) -> Self {
        Self {
            kind,
            endpoint_url: None,
            api_key_env_var: None,
            model: None,
            script_path: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            max_in_flight: default_max_in_flight(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if self.timeout_ms == 0
            || self.max_retries == 0
            || self.backoff_base_ms == 0
            || self.max_in_flight == 0
        {
            return invalid(
                "timeout_ms, max_retries, backoff_base_ms and max_in_flight must be positive",
            );
        }
        match self.kind {
            BackendKind::Remote if self.endpoint_url.is_none() => {
                invalid("remote backend requires endpoint_url")
            }
            BackendKind::Scripted if self.script_path.is_none() => {
                invalid("scripted backend requires script_path")
            }
            _ => Ok(()),
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError>;
}

/// Shared handle used by the pipeline roles. Cloning is cheap.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self { backend }
    }

    /// Builds the configured backend. Remote backends resolve their API key
    /// here, so a missing key is reported before any request is made.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Heuristic => Arc::new(HeuristicBackend),
            BackendKind::Scripted => {
                let path = config.script_path.as_deref().expect("validated");
                Arc::new(ScriptedBackend::new(Script::load(path)?))
            }
            BackendKind::Remote => Arc::new(RemoteBackend::from_config(
                config,
                Arc::new(HttpTransport::new()?),
            )?),
        };
        Ok(Self { backend })
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        request.validate()?;
        self.backend.generate(request)
    }
}

pub(crate) fn count_prompt_tokens(request: &GenerationRequest) -> u64 {
    use crate::preprocess::{SimpleSplitter, Tokenizer};
    request
        .messages
        .iter()
        .map(|m| SimpleSplitter.count_tokens(&m.content) as u64)
        .sum()
}

pub(crate) fn count_text_tokens(text: &str) -> u64 {
    use crate::preprocess::{SimpleSplitter, Tokenizer};
    SimpleSplitter.count_tokens(text) as u64
}
