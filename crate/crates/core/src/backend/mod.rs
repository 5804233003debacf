//! Chat-completion backends, retries, transcripts and usage accounting.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{Identity, Payload, TaskKind};

mod http;
mod image;
mod synthetic;
mod transcript;
mod usage;

pub use http::{AuthStyle, HttpBackend};
pub use image::{encode_image, encode_image_bytes, EncodedImage, IMAGE_SIDE};
pub use synthetic::{
    clustered_latent, random_latent, FilterRule, SyntheticBackend, SyntheticRaterConfig,
};
pub use transcript::{
    plan_sentence_trials, plan_trials, read_transcript, run_participant, ParticipantOutcome,
    RunOptions, SentenceItem, Trial, TrialInput, TrialRecord, TrialStatus, Usage,
};
pub use usage::{ParticipantUsage, Price, PriceTable, UsageLedger};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("rejected by content filter: {0}")]
    ContentFiltered(String),

    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("fatal backend error: {0}")]
    Fatal(String),

    #[error("image {path}: {message}")]
    Image { path: String, message: String },
}

/// Outcome of a single attempt, before retry policy is applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptError {
    Retryable {
        message: String,
        retry_after: Option<Duration>,
    },
    Filtered(String),
    Fatal(String),
}

impl AttemptError {
    pub fn retryable(message: impl Into<String>) -> Self {
        AttemptError::Retryable {
            message: message.into(),
            retry_after: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage::text(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        ChatMessage::text(Role::Assistant, text)
    }

    pub fn with_image(mut self, data_url: String) -> Self {
        self.content.push(ContentPart::ImageUrl {
            image_url: ImageUrl { url: data_url },
        });
        self
    }

    /// Concatenated text parts.
    pub fn joined_text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.content
            .iter()
            .filter(|p| matches!(p, ContentPart::ImageUrl { .. }))
            .count()
    }

    /// OpenAI wire form: plain string content when there are no images.
    pub fn to_wire(&self) -> serde_json::Value {
        let content = match self.content.as_slice() {
            [ContentPart::Text { text }] => serde_json::Value::String(text.clone()),
            parts => serde_json::to_value(parts).expect("content parts serialize"),
        };
        serde_json::json!({ "role": self.role, "content": content })
    }
}

/// What the request is about; backends that simulate replies read this,
/// HTTP backends ignore it.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestMeta {
    pub identity: Identity,
    pub task: TaskKind,
    pub trial_index: usize,
    pub item_ids: Vec<String>,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub meta: RequestMeta,
}

impl ChatRequest {
    /// Wire body for chat-completions endpoints.
    pub fn body(&self, model: &str) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": model,
            "messages": self.messages.iter().map(ChatMessage::to_wire).collect::<Vec<_>>(),
            "temperature": self.temperature,
        });
        if let Some(max) = self.max_tokens {
            body["max_tokens"] = max.into();
        }
        body
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub retries: u32,
}

pub trait ChatBackend: Send + Sync {
    fn model(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError>;
}

/// Exponential backoff with jitter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_ms: u64,
    pub cap_ms: u64,
    pub jitter_seed: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_ms: 1_000,
            cap_ms: 60_000,
            jitter_seed: 0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `min(cap, base·2^retry)`
    /// scaled by a jitter factor in `[0.5, 1)`.
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let exp = self.base_ms.saturating_mul(1u64 << retry.min(32));
        let ceiling = exp.min(self.cap_ms) as f64;
        let factor: f64 = rng.random_range(0.5..1.0);
        Duration::from_millis((ceiling * factor).round() as u64)
    }

    /// Run `attempt` until it succeeds, is filtered, fails fatally or the
    /// retries are used up. Returns the value and the number of retries.
    pub fn run<T>(
        &self,
        sleep: &mut dyn FnMut(Duration),
        mut attempt: impl FnMut() -> Result<T, AttemptError>,
    ) -> Result<(T, u32), BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        let mut retries = 0;
        loop {
            match attempt() {
                Ok(v) => return Ok((v, retries)),
                Err(AttemptError::Filtered(m)) => return Err(BackendError::ContentFiltered(m)),
                Err(AttemptError::Fatal(m)) => return Err(BackendError::Fatal(m)),
                Err(AttemptError::Retryable {
                    message,
                    retry_after,
                }) => {
                    if retries >= self.max_retries {
                        return Err(BackendError::Transport {
                            attempts: retries + 1,
                            message,
                        });
                    }
                    let mut wait = self.delay(retries, &mut rng);
                    if let Some(hint) = retry_after {
                        wait = wait.max(hint.min(Duration::from_millis(self.cap_ms)));
                    }
                    log::debug!("retry {} in {:?}: {message}", retries + 1, wait);
                    sleep(wait);
                    retries += 1;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    #[default]
    Synthetic,
}

/// Backend settings as they appear in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: Option<String>,
    pub auth: AuthStyle,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_secs: f64,
    pub retry: RetryPolicy,
    pub parallel_participants: usize,
    /// Send the whole conversation so far instead of `[intro, trial]`.
    pub full_history: bool,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Synthetic,
            endpoint: None,
            model: "synthetic".into(),
            api_key_env: None,
            auth: AuthStyle::Bearer,
            temperature: 1.0,
            max_tokens: None,
            timeout_secs: 120.0,
            retry: RetryPolicy::default(),
            parallel_participants: 1,
            full_history: false,
        }
    }
}

impl BackendConfig {
    /// All problems found, one per entry.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            out.push(format!("backend.temperature must be >= 0, got {}", self.temperature));
        }
        if self.parallel_participants == 0 {
            out.push("backend.parallel_participants must be >= 1".into());
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            out.push("backend.timeout_secs must be > 0".into());
        }
        if self.model.trim().is_empty() {
            out.push("backend.model is empty".into());
        }
        if self.retry.base_ms > self.retry.cap_ms {
            out.push("backend.retry.base_ms exceeds cap_ms".into());
        }
        if self.kind == BackendKind::Http {
            match &self.endpoint {
                None => out.push("backend.endpoint is required for http".into()),
                Some(e) if !(e.starts_with("http://") || e.starts_with("https://")) => {
                    out.push(format!("backend.endpoint {e:?} is not an http(s) URL"))
                }
                Some(_) => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn timeout_twice_then_success() {
        let policy = RetryPolicy::default();
        let calls = Cell::new(0);
        let mut slept = Vec::new();
        let (v, retries) = policy
            .run(&mut |d| slept.push(d), || {
                calls.set(calls.get() + 1);
                if calls.get() <= 2 {
                    Err(AttemptError::retryable("timeout"))
                } else {
                    Ok("42")
                }
            })
            .unwrap();
        assert_eq!((v, retries), ("42", 2));
        assert_eq!(slept.len(), 2);
        assert!(slept[0] >= Duration::from_millis(500) && slept[0] < Duration::from_millis(1000));
        assert!(slept[1] >= Duration::from_millis(1000) && slept[1] < Duration::from_millis(2000));
    }

    #[test]
    fn exhaustion_and_classification() {
        let policy = RetryPolicy {
            max_retries: 3,
            ..RetryPolicy::default()
        };
        let mut n = 0;
        let err = policy
            .run::<()>(&mut |_| {}, || {
                n += 1;
                Err(AttemptError::retryable("503"))
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport { attempts: 4, .. }));
        assert_eq!(n, 4);

        let mut n = 0;
        let err = policy
            .run::<()>(&mut |_| {}, || {
                n += 1;
                Err(AttemptError::Filtered("content_filter".into()))
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::ContentFiltered(_)));
        assert_eq!(n, 1);
    }

    #[test]
    fn delays_are_capped() {
        let policy = RetryPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for retry in 0..40 {
            assert!(policy.delay(retry, &mut rng) <= Duration::from_millis(60_000));
        }
    }

    #[test]
    fn wire_shape() {
        let m = ChatMessage::user("hi");
        assert_eq!(m.to_wire(), serde_json::json!({"role": "user", "content": "hi"}));
        let m = ChatMessage::user("look").with_image("data:image/png;base64,AAAA".into());
        let w = m.to_wire();
        assert_eq!(w["content"][1]["type"], "image_url");
        assert_eq!(w["content"][1]["image_url"]["url"], "data:image/png;base64,AAAA");
    }

    #[test]
    fn config_validation() {
        let mut c = BackendConfig {
            temperature: -1.0,
            parallel_participants: 0,
            kind: BackendKind::Http,
            ..BackendConfig::default()
        };
        assert_eq!(c.problems().len(), 3);
        c.temperature = 0.7;
        c.parallel_participants = 4;
        c.endpoint = Some("https://example.invalid/v1/chat/completions".into());
        assert!(c.problems().is_empty());
    }
}
