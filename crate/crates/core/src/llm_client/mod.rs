//! Chat-completion abstraction.
//!
//! Every pipeline stage talks to a [`ChatBackend`]. Three implementations
//! ship with the crate:
//!
//! * [`RemoteBackend`] speaks the chat-completions HTTP shape.
//! * [`ScriptedBackend`] answers from canned replies and deterministic
//!   rules, for offline runs and tests.
//! * [`OracleBackend`] answers placement requests with the geometric
//!   relation solver and defers everything else to the scripted rules.
//!
//! Prompts built by this crate end with a single `DATA: {json}` line that
//! carries the request's inputs in machine-readable form. The scripted and
//! oracle backends read that line; remote models may ignore it.

mod oracle;
mod remote;
mod scripted;
pub mod structured;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::fnv1a64;

pub use oracle::OracleBackend;
pub use remote::{
    HttpResponse, HttpTransport, RemoteBackend, RemoteConfig, ReqwestTransport, TransportError,
};
pub(crate) use scripted::lexicon_entry;
pub use scripted::{jaccard_score, CannedRule, ScriptedBackend, LEXICON};
pub use structured::{parse_structured, Expected, PlacementRecord, StructuredValue};

pub const DATA_PREFIX: &str = "DATA: ";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("no {expected} found in reply: {text:?}")]
    Unparseable { expected: String, text: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted rule for a {0} request")]
    NoRule(RequestTag),
    #[error("oracle could not answer: {0}")]
    Oracle(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// Which chat backend to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    #[default]
    Oracle,
    Remote,
}

impl BackendKind {
    pub const ALL: [BackendKind; 3] = [BackendKind::Scripted, BackendKind::Oracle, BackendKind::Remote];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Scripted => "scripted",
            BackendKind::Oracle => "oracle",
            BackendKind::Remote => "remote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s.trim().to_lowercase())
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Builds a backend. The remote one needs a base URL and an API key.
pub fn make_backend(
    kind: BackendKind,
    remote: Option<&RemoteConfig>,
    predicates: crate::evaluation::PredicateConfig,
) -> Result<Box<dyn ChatBackend>, LlmError> {
    Ok(match kind {
        BackendKind::Scripted => Box::new(ScriptedBackend::new()),
        BackendKind::Oracle => Box::new(OracleBackend::new(predicates)),
        BackendKind::Remote => {
            let cfg = remote.ok_or_else(|| LlmError::Config("remote backend needs a base URL".into()))?;
            if cfg.base_url.trim().is_empty() {
                return Err(LlmError::Config("remote backend needs a base URL".into()));
            }
            if cfg.api_key.as_deref().is_none_or(|k| k.trim().is_empty()) {
                return Err(LlmError::Config("remote backend needs an API key".into()));
            }
            Box::new(RemoteBackend::new(cfg.clone()))
        }
    })
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
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

/// Routing hint for the scripted and oracle backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    ObjectExtraction,
    Similarity,
    Placement,
    StepPlanning,
}

impl RequestTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::ObjectExtraction => "object_extraction",
            RequestTag::Similarity => "similarity",
            RequestTag::Placement => "placement",
            RequestTag::StepPlanning => "step_planning",
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn new(tag: RequestTag, messages: Vec<ChatMessage>) -> Self {
        Self { messages, temperature: 0.0, max_tokens: 1024, tag }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// Stable hash of the tag and all message contents.
    pub fn fingerprint(&self) -> u64 {
        let mut buf = Vec::new();
        buf.extend_from_slice(self.tag.as_str().as_bytes());
        buf.push(0x1f);
        for (i, m) in self.messages.iter().enumerate() {
            if i > 0 {
                buf.push(0x1e);
            }
            buf.extend_from_slice(m.content.as_bytes());
        }
        fnv1a64(&buf)
    }

    /// All message contents joined by newlines.
    pub fn joined_content(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }

    /// The JSON payload of the last `DATA:` line, if any.
    pub fn data(&self) -> Option<serde_json::Value> {
        self.messages.iter().rev().find_map(|m| {
            m.content
                .lines()
                .rev()
                .find_map(|line| line.strip_prefix(DATA_PREFIX))
                .and_then(|json| serde_json::from_str(json).ok())
        })
    }
}

/// Renders the machine-readable trailer line.
pub fn data_line(value: &serde_json::Value) -> String {
    format!("{DATA_PREFIX}{value}")
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;

    fn name(&self) -> &str {
        "backend"
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}
