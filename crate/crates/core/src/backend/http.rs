use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{
    AttemptError, BackendConfig, BackendError, ChatBackend, ChatReply, ChatRequest, RetryPolicy,
    Usage,
};

/// How the API key is presented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AuthStyle {
    /// `Authorization: Bearer <key>` (OpenAI, most local servers).
    #[default]
    Bearer,
    /// `api-key: <key>` (Azure).
    ApiKeyHeader,
    None,
}

/// Client for OpenAI-compatible chat-completions endpoints.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    auth: AuthStyle,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("auth", &self.auth)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = cfg
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Fatal("no endpoint configured".into()))?;
        let api_key = match (&cfg.api_key_env, cfg.auth) {
            (_, AuthStyle::None) => None,
            (Some(var), _) => Some(std::env::var(var).map_err(|_| {
                BackendError::Fatal(format!("environment variable {var} is not set"))
            })?),
            (None, _) => None,
        };
        Ok(Self::new(
            endpoint,
            cfg.model.clone(),
            cfg.auth,
            api_key,
            Duration::from_secs_f64(cfg.timeout_secs),
            cfg.retry.clone(),
        ))
    }

    pub fn new(
        endpoint: String,
        model: String,
        auth: AuthStyle,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            agent,
            endpoint,
            model,
            auth,
            api_key,
            retry,
        }
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<(String, Usage), AttemptError> {
        let mut req = self
            .agent
            .post(&self.endpoint)
            .header("Content-Type", "application/json");
        match (&self.api_key, self.auth) {
            (Some(key), AuthStyle::Bearer) => {
                req = req.header("Authorization", &format!("Bearer {key}"))
            }
            (Some(key), AuthStyle::ApiKeyHeader) => req = req.header("api-key", key),
            _ => {}
        }
        let mut resp = req.send_json(body).map_err(classify_transport)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| AttemptError::retryable(format!("reading body: {e}")))?;
        classify_response(status, &text, retry_after)
    }
}

fn classify_transport(e: ureq::Error) -> AttemptError {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::HostNotFound
        | ureq::Error::ConnectionFailed => AttemptError::retryable(e.to_string()),
        other => AttemptError::Fatal(other.to_string()),
    }
}

fn mentions_filter(v: &serde_json::Value) -> bool {
    let code = |v: &serde_json::Value| {
        v.as_str().is_some_and(|s| {
            let s = s.to_ascii_lowercase();
            s.contains("content_filter") || s.contains("responsibleaipolicyviolation")
        })
    };
    let err = &v["error"];
    code(&err["code"]) || code(&err["innererror"]["code"]) || code(&err["type"])
}

/// Map an HTTP status and body to reply text or an attempt error.
pub(crate) fn classify_response(
    status: u16,
    body: &str,
    retry_after: Option<Duration>,
) -> Result<(String, Usage), AttemptError> {
    let json: Option<serde_json::Value> = serde_json::from_str(body).ok();
    let snippet: String = body.chars().take(300).collect();
    match status {
        200..=299 => {}
        408 | 429 | 500..=599 => {
            return Err(AttemptError::Retryable {
                message: format!("HTTP {status}: {snippet}"),
                retry_after,
            })
        }
        _ if json.as_ref().is_some_and(mentions_filter) => {
            return Err(AttemptError::Filtered(format!("HTTP {status}: {snippet}")))
        }
        _ => return Err(AttemptError::Fatal(format!("HTTP {status}: {snippet}"))),
    }
    let json = json.ok_or_else(|| AttemptError::retryable(format!("malformed JSON: {snippet}")))?;
    let choice = &json["choices"][0];
    if choice["finish_reason"].as_str() == Some("content_filter") {
        return Err(AttemptError::Filtered("finish_reason content_filter".into()));
    }
    let text = match &choice["message"]["content"] {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        other => return Err(AttemptError::Fatal(format!("unexpected content {other}"))),
    };
    let usage = Usage {
        prompt_tokens: json["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: json["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    };
    Ok((text, usage))
}

impl ChatBackend for HttpBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatReply, BackendError> {
        let body = request.body(&self.model);
        let start = Instant::now();
        let ((text, usage), retries) = self
            .retry
            .run(&mut std::thread::sleep, || self.attempt(&body))?;
        Ok(ChatReply {
            text,
            usage,
            latency_ms: start.elapsed().as_millis() as u64,
            retries,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classes() {
        let ok = r#"{"choices":[{"message":{"content":"40"},"finish_reason":"stop"}],"usage":{"prompt_tokens":120,"completion_tokens":1}}"#;
        let (text, usage) = classify_response(200, ok, None).unwrap();
        assert_eq!(text, "40");
        assert_eq!(usage.prompt_tokens, 120);

        assert!(matches!(
            classify_response(429, "slow down", Some(Duration::from_secs(2))),
            Err(AttemptError::Retryable { retry_after: Some(_), .. })
        ));
        assert!(matches!(classify_response(503, "", None), Err(AttemptError::Retryable { .. })));
        assert!(matches!(classify_response(401, "{}", None), Err(AttemptError::Fatal(_))));

        let filtered = r#"{"error":{"code":"content_filter","message":"flagged"}}"#;
        assert!(matches!(classify_response(400, filtered, None), Err(AttemptError::Filtered(_))));
        let azure = r#"{"error":{"code":"BadRequest","innererror":{"code":"ResponsibleAIPolicyViolation"}}}"#;
        assert!(matches!(classify_response(400, azure, None), Err(AttemptError::Filtered(_))));
        let finish = r#"{"choices":[{"message":{"content":null},"finish_reason":"content_filter"}]}"#;
        assert!(matches!(classify_response(200, finish, None), Err(AttemptError::Filtered(_))));
    }
}
