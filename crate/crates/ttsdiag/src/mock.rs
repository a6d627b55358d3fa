//! Deterministic mock endpoint implementing the chat-completion wire
//! protocol, with configurable stage-level accuracies.
//!
//! Every behavior is a pure function of (config seed, raw request body
//! bytes): identical requests always get identical responses, independent of
//! arrival order or interleaving. Randomness is simulated by hashing the
//! seed and body into uniform draws, so a seeded client run replays
//! byte-identically while distinct requests draw independently.
//!
//! The mock keys on the image's content digest, recovered from the request's
//! base64 payload; the wire protocol carries no side channel and the real
//! client code path is exercised unmodified. Stage-1 descriptions embed a
//! marker token (`MARK_POS`/`MARK_NEG`) with probability q, and stage-2
//! grading is a pure text function of that marker with accuracy r, which
//! gives pipeline statistics an analytic ground truth:
//! P(correct answer) = q*r + (1-q)*0.5.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::sync::atomic::{AtomicU64, Ordering};

use axum::extract::State;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::client::{WireChoice, WireContent, WirePart, WireRequest, WireResponse, WireResponseMessage};
use crate::dataset::{Dataset, DatasetError, encode_image};
use crate::hashing::{hash_to_unit, sha256_hex, sha256_parts};

/// Marker a label-consistent positive description carries.
pub const MARK_POS: &str = "MARK_POS";
/// Marker a label-consistent negative description carries.
pub const MARK_NEG: &str = "MARK_NEG";

/// Mock behavior knobs. All draws derive from `seed` plus request bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockConfig {
    /// image content digest (64 hex chars) -> ground-truth label.
    #[serde(default)]
    pub label_map: BTreeMap<String, u8>,
    /// q: probability a stage-1 description carries the label marker.
    #[serde(default = "default_prob")]
    pub stage1_informativeness: f64,
    /// r1: stage-2 accuracy on marked-positive descriptions.
    #[serde(default = "default_prob")]
    pub stage2_accuracy_pos: f64,
    /// r0: stage-2 accuracy on marked-negative descriptions.
    #[serde(default = "default_prob")]
    pub stage2_accuracy_neg: f64,
    /// Artificial per-request delay.
    #[serde(default)]
    pub latency_ms: u64,
    /// Probability a request fails with a 500 (content-keyed, so retried
    /// identical requests keep failing; 1.0 fails everything).
    #[serde(default)]
    pub fail_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_prob() -> f64 {
    1.0
}

impl MockConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("stage1_informativeness", self.stage1_informativeness),
            ("stage2_accuracy_pos", self.stage2_accuracy_pos),
            ("stage2_accuracy_neg", self.stage2_accuracy_neg),
            ("fail_rate", self.fail_rate),
        ] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(format!("{name} must lie in [0,1], got {p}"));
            }
        }
        for digest in self.label_map.keys() {
            if digest.len() != 64 || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(format!("label_map key {digest:?} is not 64 hex chars"));
            }
        }
        for (digest, label) in &self.label_map {
            if *label > 1 {
                return Err(format!("label_map[{digest:?}] = {label} outside {{0,1}}"));
            }
        }
        Ok(())
    }
}

/// Map every image in a dataset to its label by content digest, so the mock
/// can be pointed at a manifest instead of hand-writing digests.
pub fn label_map_from_dataset(dataset: &Dataset) -> Result<BTreeMap<String, u8>, DatasetError> {
    let mut map = BTreeMap::new();
    for sample in &dataset.samples {
        let payload = encode_image(sample)?;
        map.insert(payload.content_digest, sample.label);
    }
    Ok(map)
}

/// Uniform draw in [0,1) from (seed, domain tag, request bytes). The tag
/// separates draw purposes so e.g. the failure draw never correlates with
/// the answer draw for the same request.
fn unit_draw(seed: u64, tag: &[u8], body: &[u8]) -> f64 {
    hash_to_unit(&sha256_parts(&[&seed.to_le_bytes(), tag, body]))
}

fn boxed(answer: u8) -> String {
    format!("\\boxed{{{answer}}}")
}

/// Stage-1 description for an image digest. With probability q (via `draw`)
/// the text carries the marker consistent with the digest's label; otherwise,
/// and for unknown digests, it is neutral. `variant` is a short token that
/// differentiates texts across generation indices.
pub fn mock_stage1(image_digest: &str, cfg: &MockConfig, draw: f64, variant: &str) -> String {
    match cfg.label_map.get(image_digest) {
        Some(&label) if draw < cfg.stage1_informativeness => {
            if label == 1 {
                format!(
                    "The image shows a dense focal opacity with blurred margins. {MARK_POS} (variant {variant})"
                )
            } else {
                format!(
                    "The image shows clear, well-aerated fields with sharp margins. {MARK_NEG} (variant {variant})"
                )
            }
        }
        _ => format!(
            "The image shows nonspecific findings without a distinguishing pattern. (variant {variant})"
        ),
    }
}

/// Stage-2 grade as a pure text function: a marked prompt is answered
/// correctly with the corresponding accuracy (via `draw`), an unmarked one
/// by a fair coin. MARK_POS wins if both markers somehow appear.
pub fn mock_stage2(prompt_text: &str, cfg: &MockConfig, draw: f64) -> String {
    if prompt_text.contains(MARK_POS) {
        boxed(if draw < cfg.stage2_accuracy_pos { 1 } else { 0 })
    } else if prompt_text.contains(MARK_NEG) {
        boxed(if draw < cfg.stage2_accuracy_neg { 0 } else { 1 })
    } else {
        boxed(if draw < 0.5 { 1 } else { 0 })
    }
}

/// Direct (zero-shot / CoT) grade: answers from the label map with accuracy
/// r1/r0, or a fair coin for unknown digests.
fn mock_direct(image_digest: &str, cfg: &MockConfig, draw: f64, cot: bool) -> String {
    let answer = match cfg.label_map.get(image_digest) {
        Some(&label) => {
            let accuracy = if label == 1 {
                cfg.stage2_accuracy_pos
            } else {
                cfg.stage2_accuracy_neg
            };
            if draw < accuracy { label } else { 1 - label }
        }
        None => u8::from(draw < 0.5),
    };
    if cot {
        format!(
            "Step 1: examine the image. Step 2: weigh the findings. Conclusion: {}",
            boxed(answer)
        )
    } else {
        boxed(answer)
    }
}

/// What the mock sends back for one request body.
#[derive(Debug, Clone, PartialEq)]
pub enum MockReply {
    Text(String),
    Status(u16, String),
}

/// Decide the response for a raw request body. Pure: the HTTP layer adds
/// only latency. This is the whole behavior of the mock.
pub fn respond(cfg: &MockConfig, body: &[u8]) -> MockReply {
    if unit_draw(cfg.seed, b"fail", body) < cfg.fail_rate {
        return MockReply::Status(500, "injected failure".into());
    }

    let wire: WireRequest = match serde_json::from_slice(body) {
        Ok(w) => w,
        Err(e) => return MockReply::Status(400, format!("unparseable request body: {e}")),
    };
    let Some(user) = wire.messages.iter().find(|m| m.role == "user") else {
        return MockReply::Status(400, "no user message".into());
    };

    let (text, image_digest) = match &user.content {
        WireContent::Text(t) => (t.clone(), None),
        WireContent::Parts(parts) => {
            let mut text = String::new();
            let mut digest = None;
            for part in parts {
                match part {
                    WirePart::Text { text: t } => text.push_str(t),
                    WirePart::ImageUrl { image_url } => {
                        let Some(b64) = image_url.url.split(',').nth(1) else {
                            return MockReply::Status(400, "image url is not a data URI".into());
                        };
                        match base64::engine::general_purpose::STANDARD.decode(b64) {
                            Ok(bytes) => digest = Some(sha256_hex(&bytes)),
                            Err(e) => {
                                return MockReply::Status(400, format!("bad image base64: {e}"));
                            }
                        }
                    }
                }
            }
            (text, digest)
        }
    };

    let wants_boxed = text.contains("\\boxed{");
    let reply = match (image_digest, wants_boxed) {
        (Some(digest), true) => {
            let cot = text.contains("Let's think step by step.");
            mock_direct(&digest, cfg, unit_draw(cfg.seed, b"direct", body), cot)
        }
        (Some(digest), false) => {
            let variant_hash = sha256_parts(&[&cfg.seed.to_le_bytes(), b"variant", body]);
            let variant = hex::encode(&variant_hash[..4]);
            mock_stage1(&digest, cfg, unit_draw(cfg.seed, b"stage1", body), &variant)
        }
        (None, true) => mock_stage2(&text, cfg, unit_draw(cfg.seed, b"stage2", body)),
        (None, false) => "Acknowledged.".to_string(),
    };
    MockReply::Text(reply)
}

#[derive(Debug, thiserror::Error)]
pub enum MockError {
    #[error("invalid mock config: {0}")]
    InvalidConfig(String),
    #[error("cannot bind mock server: {0}")]
    Bind(std::io::Error),
    #[error("cannot read mock config {path}: {source}")]
    ReadConfig {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse mock config {path}: {message}")]
    ParseConfig { path: PathBuf, message: String },
}

struct Shared {
    cfg: MockConfig,
    hits: AtomicU64,
}

/// A running mock endpoint. Shuts down on drop.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Total requests received, including injected failures.
    pub fn hits(&self) -> u64 {
        self.shared.hits.load(Ordering::SeqCst)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.thread.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn handle(
    State(shared): State<Arc<Shared>>,
    body: axum::body::Bytes,
) -> axum::response::Response {
    use axum::response::IntoResponse;

    shared.hits.fetch_add(1, Ordering::SeqCst);
    if shared.cfg.latency_ms > 0 {
        tokio::time::sleep(std::time::Duration::from_millis(shared.cfg.latency_ms)).await;
    }
    match respond(&shared.cfg, &body) {
        MockReply::Text(content) => axum::Json(WireResponse {
            choices: vec![WireChoice {
                message: WireResponseMessage {
                    role: "assistant".into(),
                    content,
                },
                finish_reason: Some("stop".into()),
            }],
        })
        .into_response(),
        MockReply::Status(code, message) => (
            axum::http::StatusCode::from_u16(code).expect("static status codes"),
            message,
        )
            .into_response(),
    }
}

/// Start the mock on 127.0.0.1:`port` (0 picks a free port). The returned
/// handle reports the bound address and a request counter, and stops the
/// server when dropped.
pub fn serve(cfg: MockConfig, port: u16) -> Result<MockServer, MockError> {
    cfg.validate().map_err(MockError::InvalidConfig)?;
    let shared = Arc::new(Shared {
        cfg,
        hits: AtomicU64::new(0),
    });
    let (shutdown_tx, shutdown_rx) = tokio::sync::oneshot::channel::<()>();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel::<std::io::Result<SocketAddr>>();

    let app_shared = shared.clone();
    let thread = std::thread::Builder::new()
        .name("mock-endpoint".into())
        .spawn(move || {
            let runtime = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .expect("tokio runtime");
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(("127.0.0.1", port)).await {
                    Ok(l) => l,
                    Err(e) => {
                        let _ = addr_tx.send(Err(e));
                        return;
                    }
                };
                let addr = listener.local_addr().expect("bound socket has an address");
                let _ = addr_tx.send(Ok(addr));

                let app = axum::Router::new()
                    .route("/v1/chat/completions", axum::routing::post(handle))
                    .with_state(app_shared);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .expect("mock server loop");
            });
        })
        .expect("spawn mock server thread");

    let addr = addr_rx
        .recv()
        .expect("mock server reports its address")
        .map_err(MockError::Bind)?;
    Ok(MockServer {
        addr,
        shared,
        shutdown: Some(shutdown_tx),
        thread: Some(thread),
    })
}
