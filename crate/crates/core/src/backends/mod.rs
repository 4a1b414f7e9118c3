//! Pluggable capabilities the pipeline consumes: text generation, level
//! estimation and semantic similarity.
//!
//! Every backend is synchronous and `Send + Sync`; batch code fans calls
//! out across a bounded worker pool (see [`crate::par`]). Three families
//! are provided:
//!
//! - [`mock`]: deterministic rule-based stand-ins for offline runs,
//! - [`http`]: clients for an OpenAI-compatible chat-completions server and
//!   simple JSON estimator / similarity endpoints,
//! - [`cache`]: an exact-match memoizing wrapper around either.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::levels::ProficiencyLevel;

pub mod cache;
pub mod http;
pub mod mock;

pub use cache::{cached, Cached};
pub use http::{api_key_from_env, HttpChatGenerator, HttpEstimator, HttpSimilarity, RetryPolicy};
pub use mock::{MockEstimator, MockGenerator, MockSimilarity};

/// Default generation length cap, in tokens.
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("call budget of {limit} exhausted")]
    BudgetExceeded { limit: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Sampling settings shared by every generation call in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationProfile {
    pub model_id: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub sampling_enabled: bool,
}

impl Default for GenerationProfile {
    /// Greedy decoding, 128 new tokens.
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            sampling_enabled: false,
        }
    }
}

impl GenerationProfile {
    pub fn is_reproducible(&self) -> bool {
        self.temperature == 0.0 && !self.sampling_enabled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub messages: Vec<ChatMessage>,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub sampling_enabled: bool,
    pub model_id: String,
}

impl GenerationRequest {
    pub fn new(messages: Vec<ChatMessage>, profile: &GenerationProfile) -> Self {
        Self {
            messages,
            max_new_tokens: profile.max_new_tokens,
            temperature: profile.temperature,
            sampling_enabled: profile.sampling_enabled,
            model_id: profile.model_id.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::Precondition("request has no messages".into()));
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.trim().is_empty()) {
            return Err(BackendError::Precondition(format!("message {i} is empty")));
        }
        if self.max_new_tokens == 0 {
            return Err(BackendError::Precondition("max_new_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(BackendError::Precondition(format!(
                "temperature must be a non-negative number, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn is_reproducible(&self) -> bool {
        self.temperature == 0.0 && !self.sampling_enabled
    }

    pub fn last_user_message(&self) -> Option<&ChatMessage> {
        self.messages.iter().rev().find(|m| m.role == Role::User)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorVerdict {
    pub level: ProficiencyLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
}

pub trait Generator: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError>;
}

pub trait LevelEstimator: Send + Sync {
    fn estimate_level(&self, text: &str, language: &str) -> Result<EstimatorVerdict, BackendError>;
}

pub trait SimilarityBackend: Send + Sync {
    /// A score in [-1, 1].
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError>;
}

macro_rules! forward_impls {
    ($($ptr:ty),*) => {$(
        impl<T: Generator + ?Sized> Generator for $ptr {
            fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
                (**self).generate(request)
            }
        }
        impl<T: LevelEstimator + ?Sized> LevelEstimator for $ptr {
            fn estimate_level(&self, text: &str, language: &str) -> Result<EstimatorVerdict, BackendError> {
                (**self).estimate_level(text, language)
            }
        }
        impl<T: SimilarityBackend + ?Sized> SimilarityBackend for $ptr {
            fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
                (**self).similarity(a, b)
            }
        }
    )*};
}

forward_impls!(&T, Box<T>, Arc<T>);

pub(crate) fn require_text(what: &str, text: &str) -> Result<(), BackendError> {
    if text.trim().is_empty() {
        Err(BackendError::Precondition(format!("{what} is empty")))
    } else {
        Ok(())
    }
}

/// The three capabilities a pipeline run needs, bundled for sharing.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn Generator>,
    pub estimator: Arc<dyn LevelEstimator>,
    pub similarity: Arc<dyn SimilarityBackend>,
}

impl Backends {
    pub fn new(
        generator: impl Generator + 'static,
        estimator: impl LevelEstimator + 'static,
        similarity: impl SimilarityBackend + 'static,
    ) -> Self {
        Self {
            generator: Arc::new(generator),
            estimator: Arc::new(estimator),
            similarity: Arc::new(similarity),
        }
    }

    /// Rule-based backends with no external dependencies.
    pub fn mock() -> Self {
        Self::new(MockGenerator::default(), MockEstimator, MockSimilarity)
    }
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends").finish_non_exhaustive()
    }
}

/// Fails generation calls once a fixed number have been made.
#[derive(Debug)]
pub struct Budgeted<G> {
    inner: G,
    limit: u64,
    used: AtomicU64,
}

impl<G> Budgeted<G> {
    pub fn new(inner: G, limit: u64) -> Self {
        Self {
            inner,
            limit,
            used: AtomicU64::new(0),
        }
    }

    pub fn calls_made(&self) -> u64 {
        self.used.load(Ordering::SeqCst).min(self.limit)
    }
}

impl<G: Generator> Generator for Budgeted<G> {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        if self.used.fetch_add(1, Ordering::SeqCst) >= self.limit {
            return Err(BackendError::BudgetExceeded { limit: self.limit });
        }
        self.inner.generate(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        let profile = GenerationProfile::default();
        assert!(GenerationRequest::new(vec![], &profile).validate().is_err());
        let ok = GenerationRequest::new(vec![ChatMessage::user("hi")], &profile);
        assert!(ok.validate().is_ok());
        assert!(ok.is_reproducible());
        let mut bad = ok.clone();
        bad.temperature = -1.0;
        assert!(bad.validate().is_err());
        bad.temperature = 0.7;
        assert!(bad.validate().is_ok());
        assert!(!bad.is_reproducible());
        let blank = GenerationRequest::new(vec![ChatMessage::user("  ")], &profile);
        assert!(blank.validate().is_err());
    }

    #[test]
    fn default_profile_is_greedy_128() {
        let p = GenerationProfile::default();
        assert_eq!(p.max_new_tokens, 128);
        assert!(p.is_reproducible());
    }

    #[test]
    fn budget_ceiling() {
        struct Echo;
        impl Generator for Echo {
            fn generate(&self, _: &GenerationRequest) -> Result<String, BackendError> {
                Ok("x".into())
            }
        }
        let g = Budgeted::new(Echo, 2);
        let req = GenerationRequest::new(vec![ChatMessage::user("a")], &GenerationProfile::default());
        assert!(g.generate(&req).is_ok());
        assert!(g.generate(&req).is_ok());
        assert_eq!(g.generate(&req), Err(BackendError::BudgetExceeded { limit: 2 }));
        assert_eq!(g.calls_made(), 2);
    }

    #[test]
    fn roles_serialize_lowercase() {
        let m = ChatMessage::assistant("ok");
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"role":"assistant","content":"ok"}"#
        );
    }
}
