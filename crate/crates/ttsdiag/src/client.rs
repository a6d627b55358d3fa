//! Blocking client for chat-completion-compatible endpoints.
//!
//! One logical completion = one HTTP request. Sampling N generations issues N
//! independent requests rather than using the wire protocol's multi-choice
//! field, so each generation gets its own cache entry and retry lifecycle.
//!
//! Retries cover transport failures and 5xx responses with exponential
//! backoff (0.5 s base, doubled per attempt, full jitter). 4xx responses are
//! never retried: the request itself is at fault and will not improve.

use std::sync::LazyLock;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::ImagePayload;
use crate::prompting::PromptBundle;

/// Bearer token source for outgoing requests.
pub const API_KEY_ENV: &str = "TTSDIAG_API_KEY";

/// One chat-completion endpoint and the limits applied when talking to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_tokens() -> u32 {
    512
}
fn default_timeout_s() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    2
}
fn default_max_in_flight() -> usize {
    4
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_url.is_empty() {
            return Err("base_url must be non-empty".into());
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if !(self.timeout_s > 0.0) {
            return Err(format!("timeout_s must be positive, got {}", self.timeout_s));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s)
    }

    fn completions_url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// One request to be completed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub prompt: PromptBundle,
    /// Present iff `prompt.wants_image`.
    pub image: Option<ImagePayload>,
    pub temperature: f64,
    /// Cache/trace key; also the basis for the wire `seed` field upstream.
    pub request_tag: String,
    /// Forwarded to the endpoint when set. Real servers may ignore it; the
    /// deterministic mock does not.
    pub seed: Option<u64>,
}

impl ChatRequest {
    fn validate(&self) -> Result<(), ClientError> {
        if self.prompt.wants_image != self.image.is_some() {
            return Err(ClientError::InvalidRequest(format!(
                "prompt wants_image={} but image is {}",
                self.prompt.wants_image,
                if self.image.is_some() { "present" } else { "absent" }
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

/// One model completion, or the error that stands in for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Empty only when `finish_reason` is `Error`.
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
    /// Diagnostic for `Error` completions; `None` otherwise.
    pub error: Option<String>,
}

impl Completion {
    fn from_error(e: &ClientError, latency: Duration) -> Completion {
        Completion {
            text: String::new(),
            finish_reason: FinishReason::Error,
            latency,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("timeout after {attempts} attempt(s): {message}")]
    Timeout { attempts: u32, message: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    TransportFailure { attempts: u32, message: String },
    #[error("malformed response body: {message}")]
    ProtocolError { message: String },
    #[error("request rejected with status {status}: {body}")]
    RejectedRequest { status: u16, body: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

// ---- wire shapes -----------------------------------------------------------
// Shared with the mock server so both sides parse one definition.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: WireContent,
}

/// Either a plain string or the content-parts array used to attach images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireContent {
    Text(String),
    Parts(Vec<WirePart>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum WirePart {
    #[serde(rename = "text")]
    Text { text: String },
    #[serde(rename = "image_url")]
    ImageUrl { image_url: WireImageUrl },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImageUrl {
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponse {
    pub choices: Vec<WireChoice>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireChoice {
    pub message: WireResponseMessage,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireResponseMessage {
    pub role: String,
    pub content: String,
}

/// Assemble the wire request. Pure: the same inputs always produce the same
/// struct, and serde keeps field order fixed, so serialized bodies are
/// byte-identical across calls (cache keys and the mock depend on this).
pub fn build_wire_request(cfg: &EndpointConfig, req: &ChatRequest) -> WireRequest {
    let mut messages = Vec::with_capacity(2);
    if !req.prompt.system_text.is_empty() {
        messages.push(WireMessage {
            role: "system".into(),
            content: WireContent::Text(req.prompt.system_text.clone()),
        });
    }
    let user_content = match &req.image {
        Some(image) => WireContent::Parts(vec![
            WirePart::Text {
                text: req.prompt.user_text.clone(),
            },
            WirePart::ImageUrl {
                image_url: WireImageUrl {
                    url: format!(
                        "data:{};base64,{}",
                        image.media_type, image.base64_data
                    ),
                },
            },
        ]),
        None => WireContent::Text(req.prompt.user_text.clone()),
    };
    messages.push(WireMessage {
        role: "user".into(),
        content: user_content,
    });
    WireRequest {
        model: cfg.model_name.clone(),
        temperature: req.temperature,
        max_tokens: cfg.max_tokens,
        seed: req.seed,
        messages,
    }
}

static HTTP: LazyLock<reqwest::blocking::Client> = LazyLock::new(|| {
    reqwest::blocking::Client::builder()
        .build()
        .expect("HTTP client construction")
});

enum AttemptFailure {
    Timeout(String),
    Transport(String),
    ServerStatus(u16, String),
}

fn send_once(
    cfg: &EndpointConfig,
    url: &str,
    body: &[u8],
) -> Result<Result<Completion, AttemptFailure>, ClientError> {
    let start = Instant::now();
    let mut builder = HTTP
        .post(url)
        .header("content-type", "application/json")
        .timeout(cfg.timeout())
        .body(body.to_vec());
    if let Ok(key) = std::env::var(API_KEY_ENV) {
        builder = builder.header("authorization", format!("Bearer {key}"));
    }
    let response = match builder.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Ok(Err(AttemptFailure::Timeout(e.to_string()))),
        Err(e) => return Ok(Err(AttemptFailure::Transport(e.to_string()))),
    };

    let status = response.status();
    if status.is_server_error() {
        let text = response.text().unwrap_or_default();
        return Ok(Err(AttemptFailure::ServerStatus(status.as_u16(), text)));
    }
    if !status.is_success() {
        return Err(ClientError::RejectedRequest {
            status: status.as_u16(),
            body: response.text().unwrap_or_default(),
        });
    }

    let bytes = match response.bytes() {
        Ok(b) => b,
        Err(e) if e.is_timeout() => return Ok(Err(AttemptFailure::Timeout(e.to_string()))),
        Err(e) => return Ok(Err(AttemptFailure::Transport(e.to_string()))),
    };
    let parsed: WireResponse =
        serde_json::from_slice(&bytes).map_err(|e| ClientError::ProtocolError {
            message: format!("{e}; body prefix: {:.200}", String::from_utf8_lossy(&bytes)),
        })?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ClientError::ProtocolError {
            message: "response carried no choices".into(),
        })?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    };
    Ok(Ok(Completion {
        text: choice.message.content,
        finish_reason,
        latency: start.elapsed(),
        error: None,
    }))
}

/// Issue one completion with retries.
///
/// Transport failures, timeouts, and 5xx responses are retried up to
/// `cfg.max_retries` times with full-jitter exponential backoff; 4xx and
/// malformed bodies fail immediately.
pub fn complete(cfg: &EndpointConfig, req: &ChatRequest) -> Result<Completion, ClientError> {
    cfg.validate().map_err(ClientError::InvalidRequest)?;
    req.validate()?;
    let body = serde_json::to_vec(&build_wire_request(cfg, req)).expect("wire request serializes");
    let url = cfg.completions_url();

    let mut attempt: u32 = 0;
    loop {
        let failure = match send_once(cfg, &url, &body)? {
            Ok(completion) => return Ok(completion),
            Err(f) => f,
        };
        let attempts = attempt + 1;
        if attempt >= cfg.max_retries {
            return Err(match failure {
                AttemptFailure::Timeout(message) => ClientError::Timeout { attempts, message },
                AttemptFailure::Transport(message) => {
                    ClientError::TransportFailure { attempts, message }
                }
                AttemptFailure::ServerStatus(status, body) => ClientError::TransportFailure {
                    attempts,
                    message: format!("server status {status}: {body:.200}"),
                },
            });
        }
        let base = 0.5 * 2f64.powi(attempt as i32);
        let jittered = base * rand::random::<f64>();
        std::thread::sleep(Duration::from_secs_f64(jittered));
        attempt += 1;
    }
}

/// Source of completions. The pipeline calls through this so the runner can
/// interpose caching and tests can script responses without a server.
pub trait Completer: Sync {
    /// Must uphold the `complete_batch` contract: positional alignment and
    /// per-request failure isolation.
    fn complete_batch(&self, endpoint: &EndpointConfig, reqs: &[ChatRequest]) -> Vec<Completion>;
}

/// Talks straight to the endpoint over HTTP.
pub struct HttpCompleter;

impl Completer for HttpCompleter {
    fn complete_batch(&self, endpoint: &EndpointConfig, reqs: &[ChatRequest]) -> Vec<Completion> {
        complete_batch(endpoint, reqs)
    }
}

/// Complete a batch with at most `cfg.max_in_flight` requests outstanding.
///
/// Results align positionally with `reqs` regardless of completion order.
/// Per-request failures surface as `Error` completions carrying the error
/// text; the batch itself never fails.
pub fn complete_batch(cfg: &EndpointConfig, reqs: &[ChatRequest]) -> Vec<Completion> {
    if reqs.is_empty() {
        return Vec::new();
    }
    let workers = cfg.max_in_flight.min(reqs.len());
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Completion)>();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || {
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= reqs.len() {
                        break;
                    }
                    let started = Instant::now();
                    let completion = match complete(cfg, &reqs[i]) {
                        Ok(c) => c,
                        Err(e) => Completion::from_error(&e, started.elapsed()),
                    };
                    // Receiver outlives the scope; send cannot fail.
                    tx.send((i, completion)).expect("batch receiver alive");
                }
            });
        }
        drop(tx);
    });

    let mut slots: Vec<Option<Completion>> = vec![None; reqs.len()];
    for (i, completion) in rx {
        slots[i] = Some(completion);
    }
    slots
        .into_iter()
        .map(|s| s.expect("every index completed"))
        .collect()
}
