use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

/// One completion call, with parameters copied from a `DecodingSpec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub n: u32,
    pub top_k: Option<u32>,
    pub max_new_tokens: u32,
    pub request_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Transient; retried.
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("unknown qa: {0}")]
    UnknownQa(String),
    #[error("request rejected: {0}")]
    Rejected(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Unavailable(_))
    }
}

/// Anything that can turn a prompt into `n` generations.
pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError>;

    /// Whether probe prompts should carry a leading id-tag line. Only the mock wants one.
    fn wants_id_tag(&self) -> bool {
        false
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError> {
        (**self).generate(request)
    }

    fn wants_id_tag(&self) -> bool {
        (**self).wants_id_tag()
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError> {
        (**self).generate(request)
    }

    fn wants_id_tag(&self) -> bool {
        (**self).wants_id_tag()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub budget: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            budget: 5,
            base_delay_ms: 200,
            max_delay_ms: 10_000,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(budget: u32) -> Self {
        RetryPolicy {
            budget,
            base_delay_ms: 0,
            max_delay_ms: 0,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

/// Calls the backend, retrying transient failures with exponential backoff.
/// The request (and its id) is identical on every attempt.
pub fn generate_with_retry(
    backend: &dyn Backend,
    request: &GenerationRequest,
    retry: &RetryPolicy,
) -> Result<Vec<String>> {
    let mut attempt = 0;
    loop {
        match backend.generate(request) {
            Ok(texts) if texts.len() == request.n as usize => return Ok(texts),
            Ok(texts) => {
                return Err(Error::BackendUnavailable {
                    request_id: request.request_id.clone(),
                    attempts: attempt + 1,
                    message: format!("expected {} generations, got {}", request.n, texts.len()),
                })
            }
            Err(BackendError::UnknownQa(m)) => return Err(Error::UnknownQa(m)),
            Err(e) if e.is_retryable() && attempt < retry.budget => {
                tracing::debug!(request_id = %request.request_id, attempt, "retrying: {e}");
                std::thread::sleep(retry.delay(attempt));
                attempt += 1;
            }
            Err(e) => {
                return Err(Error::BackendUnavailable {
                    request_id: request.request_id.clone(),
                    attempts: attempt + 1,
                    message: e.to_string(),
                })
            }
        }
    }
}

/// Client for an HTTP completion endpoint.
///
/// Posts `{model, prompt, temperature, top_k, n, max_tokens, seed}` to
/// `{base_url}/completions` and reads `{choices: [...]}`, where each choice is
/// either a bare string or an object with a `text` field.
pub struct HttpBackend {
    base_url: String,
    auth_token: Option<String>,
    id_tag: bool,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    n: u32,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WireChoice {
    Text(String),
    Object { text: String },
}

#[derive(Deserialize)]
struct WireError {
    error: String,
    #[serde(default)]
    message: String,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, auth_token: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout(Duration::from_secs(300))
            .build();
        HttpBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            auth_token,
            id_tag: false,
            agent,
        }
    }

    /// Marks the endpoint as a mock server that expects tagged prompts.
    pub fn mock_endpoint(mut self) -> Self {
        self.id_tag = true;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/completions", self.base_url)
    }
}

impl Backend for HttpBackend {
    fn generate(&self, request: &GenerationRequest) -> std::result::Result<Vec<String>, BackendError> {
        let body = WireRequest {
            model: &request.model,
            prompt: &request.prompt,
            temperature: request.temperature,
            top_k: request.top_k,
            n: request.n,
            max_tokens: request.max_new_tokens,
            seed: request.seed,
        };
        let mut call = self.agent.post(&self.endpoint());
        if let Some(token) = &self.auth_token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(&body) {
            Ok(resp) => {
                let parsed: WireResponse = resp
                    .into_json()
                    .map_err(|e| BackendError::Unavailable(format!("bad response body: {e}")))?;
                Ok(parsed
                    .choices
                    .into_iter()
                    .map(|c| match c {
                        WireChoice::Text(t) | WireChoice::Object { text: t } => t,
                    })
                    .collect())
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                if code == 429 || code >= 500 {
                    return Err(BackendError::Unavailable(format!("status {code}: {text}")));
                }
                match serde_json::from_str::<WireError>(&text) {
                    Ok(e) if e.error == "unknown_qa" => Err(BackendError::UnknownQa(e.message)),
                    _ => Err(BackendError::Rejected(format!("status {code}: {text}"))),
                }
            }
            Err(e) => Err(BackendError::Unavailable(e.to_string())),
        }
    }

    fn wants_id_tag(&self) -> bool {
        self.id_tag
    }
}
