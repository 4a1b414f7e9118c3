//! HTTP clients.
//!
//! Generation speaks the OpenAI-compatible chat-completions protocol:
//! `POST {url}` with `{"model","messages","temperature","max_tokens"}` and a
//! bearer token, reading `choices[0].message.content`. The estimator and
//! similarity services are plain JSON endpoints:
//!
//! - estimator: `{"text","language"}` -> `{"level"[, "score"]}`
//! - similarity: `{"a","b"}` -> `{"score"}`

use std::env;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    require_text, BackendError, EstimatorVerdict, GenerationRequest, Generator, LevelEstimator, SimilarityBackend,
};
use crate::levels::parse_level;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 500,
            multiplier: 2.0,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(attempt as i32);
        Duration::from_millis(ms.min(60_000.0) as u64)
    }
}

/// Reads a bearer token from the named environment variable.
pub fn api_key_from_env(var: &str) -> Result<String, BackendError> {
    env::var(var).map_err(|_| BackendError::Precondition(format!("environment variable {var} is not set")))
}

#[derive(Debug, Clone)]
struct JsonEndpoint {
    agent: ureq::Agent,
    url: String,
    bearer: Option<String>,
    retry: RetryPolicy,
}

enum Attempt {
    Retry(String),
    Fatal(BackendError),
}

impl JsonEndpoint {
    fn new(url: impl Into<String>, bearer: Option<String>, retry: RetryPolicy) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(retry.timeout_secs)))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            url: url.into(),
            bearer,
            retry,
        }
    }

    fn post(&self, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(BackendError::Transport(format!(
            "{} after {attempts} attempt(s): {last}",
            self.url
        )))
    }

    fn post_once(&self, body: &Value) -> Result<Value, Attempt> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let resp = req.send_json(body).map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .into_body()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| Attempt::Fatal(BackendError::Protocol(format!("invalid JSON: {e}")))),
            429 | 500..=599 => Err(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Attempt::Fatal(BackendError::Rejected { status, body: text })),
        }
    }
}

/// Chat-completions client.
#[derive(Debug, Clone)]
pub struct HttpChatGenerator {
    endpoint: JsonEndpoint,
}

impl HttpChatGenerator {
    /// `url` is the full completions URL, e.g.
    /// `http://localhost:8000/v1/chat/completions`.
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key, retry),
        }
    }
}

pub fn chat_request_body(request: &GenerationRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({"role": m.role.to_string(), "content": m.content}))
        .collect();
    let mut body = json!({
        "model": request.model_id,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_new_tokens,
    });
    if !request.sampling_enabled {
        body["top_p"] = json!(1.0);
    }
    body
}

impl Generator for HttpChatGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        request.validate()?;
        let resp = self.endpoint.post(&chat_request_body(request))?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }
}

#[derive(Debug, Clone)]
pub struct HttpEstimator {
    endpoint: JsonEndpoint,
}

impl HttpEstimator {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key, retry),
        }
    }
}

impl LevelEstimator for HttpEstimator {
    fn estimate_level(&self, text: &str, language: &str) -> Result<EstimatorVerdict, BackendError> {
        require_text("text", text)?;
        let resp = self.endpoint.post(&json!({"text": text, "language": language}))?;
        let symbol = resp
            .get("level")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Protocol("missing string field \"level\"".into()))?;
        let level = parse_level(symbol).map_err(|e| BackendError::Protocol(e.to_string()))?;
        Ok(EstimatorVerdict {
            level,
            raw_score: resp.get("score").and_then(Value::as_f64),
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpSimilarity {
    endpoint: JsonEndpoint,
}

impl HttpSimilarity {
    pub fn new(url: impl Into<String>, api_key: Option<String>, retry: RetryPolicy) -> Self {
        Self {
            endpoint: JsonEndpoint::new(url, api_key, retry),
        }
    }
}

impl SimilarityBackend for HttpSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, BackendError> {
        require_text("first text", a)?;
        require_text("second text", b)?;
        let resp = self.endpoint.post(&json!({"a": a, "b": b}))?;
        let score = resp
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Protocol("missing numeric field \"score\"".into()))?;
        // small float drift from embedding servers is tolerated
        if !(-1.0 - 1e-6..=1.0 + 1e-6).contains(&score) {
            return Err(BackendError::Protocol(format!("score {score} outside [-1, 1]")));
        }
        Ok(score.clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, GenerationProfile};

    #[test]
    fn body_shape() {
        let req = GenerationRequest::new(
            vec![ChatMessage::system("s"), ChatMessage::user("u")],
            &GenerationProfile {
                model_id: "m".into(),
                ..Default::default()
            },
        );
        let body = chat_request_body(&req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["max_tokens"], 128);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "u");
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(500));
        assert_eq!(p.backoff(1), Duration::from_millis(1000));
        assert_eq!(p.backoff(2), Duration::from_millis(2000));
    }

    #[test]
    fn missing_env_key() {
        assert!(api_key_from_env("CEFR_CASCADE_SURELY_UNSET_VAR").is_err());
    }
}
