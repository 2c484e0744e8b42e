//! The completion contract shared by every decision backend.
//!
//! Three implementations ship: [`remote::RemoteBackend`] talks to a
//! chat-completion endpoint, [`scripted::ScriptedBackend`] is a deterministic
//! persona policy for offline runs, and [`cache::CachingBackend`] records and
//! replays completions from an append-only file.

pub mod cache;
pub mod remote;
pub mod scripted;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::decision::ActionSpace;
use crate::agent::graph::ComponentId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport error after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("no cached completion for key {key}")]
    CacheMiss { key: String },
    #[error("cache storage: {0}")]
    Storage(String),
    #[error("cache key {key} already holds a different completion")]
    Conflict { key: String },
    #[error("scripted policy cannot answer {0}")]
    UnsupportedQuestionKind(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

/// What a game step is asking for. Scripted policies dispatch on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Punish,
    Send,
    Return,
    Contribute,
    Vote,
    Gossip,
    Discuss,
}

/// Game-extracted facts visible to the deciding agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub task: Task,
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub round: Option<u32>,
    /// Set only when the agent was told the partner's punishment decision.
    #[serde(default)]
    pub partner_punished: Option<bool>,
    /// Amount the agent can act on (e.g. the tripled transfer when returning).
    #[serde(default)]
    pub available: Option<u32>,
    /// Last contributions of current groupmates that the agent knows about.
    #[serde(default)]
    pub peer_contributions: Vec<(String, u32)>,
}

impl Features {
    pub fn new(task: Task) -> Self {
        Features {
            task,
            condition: None,
            round: None,
            partner_punished: None,
            available: None,
            peer_contributions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RequestKind {
    Component(ComponentId),
    Decision { space: ActionSpace, features: Features },
}

/// Side information for scripted policies. Never part of a cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptContext {
    pub agent: String,
    pub tendency: f64,
    pub kind: RequestKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub script: Option<ScriptContext>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest { prompt: prompt.into(), temperature: 1.0, max_tokens: 512, seed: None, script: None }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty prompt".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        Ok(())
    }
}

/// Anything that turns a prompt into completion text. Must be callable from
/// several worker threads at once.
pub trait DecisionBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

impl<B: DecisionBackend + ?Sized> DecisionBackend for std::sync::Arc<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

/// Replays a fixed list of replies in order, then repeats the last one.
/// Handy for exercising parsing and retry paths.
#[derive(Debug)]
pub struct CannedBackend {
    replies: Vec<String>,
    next: std::sync::atomic::AtomicUsize,
}

impl CannedBackend {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        CannedBackend { replies: replies.into_iter().map(Into::into).collect(), next: Default::default() }
    }

    pub fn calls(&self) -> usize {
        self.next.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl DecisionBackend for CannedBackend {
    fn backend_id(&self) -> &str {
        "canned"
    }
    fn model_id(&self) -> &str {
        "canned"
    }
    fn complete(&self, _request: &CompletionRequest) -> Result<String, BackendError> {
        let i = self.next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.replies
            .get(i.min(self.replies.len().saturating_sub(1)))
            .cloned()
            .ok_or(BackendError::EmptyCompletion)
    }
}
