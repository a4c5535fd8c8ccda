//! Scripted chat-completions endpoint for offline tests.
//!
//! A script is a JSON object:
//!
//! ```json
//! {
//!   "reject_requests": 0,
//!   "rules": [
//!     {
//!       "model": "mock-a",
//!       "prompt_contains": "non_sarcastic",
//!       "greedy": true,
//!       "seed": 42,
//!       "temperature": 0.1,
//!       "max_word_limit": 130,
//!       "over_length_until_rung": 3,
//!       "malformed_until_rung": 17,
//!       "malformed": false,
//!       "delay_ms": 0,
//!       "response": {
//!         "content": "{\"label\": \"sarcastic\", \"rationale\": \"...\", \"confidence\": 0.9}",
//!         "logprobs": [-0.1, -0.2],
//!         "finish_reason": "stop"
//!       }
//!     }
//!   ]
//! }
//! ```
//!
//! Every rule field except `response` is optional. The first rule whose
//! filters all hold answers the request; no match is an HTTP 400. Filters
//! only look at the request body, never at arrival order, so replies are a
//! pure function of the request.
//!
//! The ladder rung of a request is recovered from its decoding parameters
//! and the last "`<n>` words" phrase in the prompt text. With
//! `over_length_until_rung: k` the rule answers every rung before `k` with
//! a truncated reply and `finish_reason: "length"`; `malformed_until_rung`
//! answers with text that holds no JSON object. `malformed: true` always
//! does so.
//!
//! Without `content` the reply is synthesized from a hash of the request:
//! a well-formed judgment whose fields follow the output format named in
//! the prompt (`"score"` or `"label"`, with `"neutral"` allowed when the
//! prompt lists it). The label leans on a hash of the model and image so
//! that variants of one sample mostly agree.
//!
//! `reject_requests: n` answers the first `n` requests the server receives
//! with HTTP 503. This is the one order-dependent behavior.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use sarceval_core::ladder::{rung_of, Decoding};
use sarceval_core::metrics::similarity::{HashingEncoder, TokenEncoder};

use crate::wire::{
    AssistantMessage, ChatRequest, ChatResponse, Choice, ChoiceLogprobs, EmbeddingRequest, EmbeddingResponse,
    ErrorBody, ErrorDetail, TokenLogprob,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub reject_requests: u32,
    #[serde(default)]
    pub rules: Vec<MockRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub greedy: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_word_limit: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub over_length_until_rung: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed_until_rung: Option<usize>,
    #[serde(default)]
    pub malformed: bool,
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub response: MockResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish_reason: Option<String>,
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("reading script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("script parse error: {0}")]
    Script(String),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

impl MockScript {
    pub fn from_json(s: &str) -> Result<Self, MockError> {
        let script: MockScript = serde_json::from_str(s).map_err(|e| MockError::Script(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn from_path(path: &Path) -> Result<Self, MockError> {
        let s = std::fs::read_to_string(path).map_err(|source| MockError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&s)
    }

    fn validate(&self) -> Result<(), MockError> {
        for (i, r) in self.rules.iter().enumerate() {
            if let Some(lp) = &r.response.logprobs {
                if lp.iter().any(|&x| x.is_nan() || x > 0.0) {
                    return Err(MockError::Script(format!("rule {i}: logprobs must be <= 0")));
                }
            }
            if r.temperature.is_some_and(|t| !(0.0..=2.0).contains(&t)) {
                return Err(MockError::Script(format!("rule {i}: temperature out of range")));
            }
        }
        Ok(())
    }

    /// A script that answers every request with a synthesized judgment.
    pub fn synthetic() -> Self {
        MockScript {
            reject_requests: 0,
            rules: vec![MockRule::default()],
        }
    }
}

static WORDS_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d+) words\b").unwrap());

/// Word limit announced in the prompt text: the last "`<n>` words" phrase.
pub fn prompt_word_limit(text: &str) -> Option<u32> {
    WORDS_RE.captures_iter(text).last().and_then(|c| c[1].parse().ok())
}

fn request_decoding(req: &ChatRequest) -> Decoding {
    match req.seed {
        None if req.temperature == 0.0 => Decoding::Greedy,
        seed => Decoding::Seeded {
            seed: seed.unwrap_or(0),
            temperature: req.temperature,
        },
    }
}

/// Ladder rung a request corresponds to, if any.
pub fn request_rung(req: &ChatRequest) -> Option<usize> {
    let decoding = request_decoding(req);
    match decoding {
        Decoding::Greedy => rung_of(decoding, prompt_word_limit(&req.prompt_text())?),
        Decoding::Seeded { .. } => rung_of(decoding, 0),
    }
}

impl MockRule {
    fn matches(&self, req: &ChatRequest, text: &str) -> bool {
        if self.model.as_ref().is_some_and(|m| *m != req.model) {
            return false;
        }
        if self
            .prompt_contains
            .as_ref()
            .is_some_and(|p| !text.contains(p.as_str()))
        {
            return false;
        }
        let greedy = request_decoding(req) == Decoding::Greedy;
        if self.greedy.is_some_and(|g| g != greedy) {
            return false;
        }
        if self.seed.is_some_and(|s| req.seed != Some(s)) {
            return false;
        }
        if self.temperature.is_some_and(|t| (t - req.temperature).abs() > 1e-9) {
            return false;
        }
        if let Some(max) = self.max_word_limit {
            if !prompt_word_limit(text).is_some_and(|wl| wl <= max) {
                return false;
            }
        }
        true
    }
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

const OPENERS: [&str; 4] = ["The image shows", "The picture depicts", "We see", "The photo presents"];
const SUBJECTS: [&str; 4] = [
    "a rainy street",
    "an empty plate",
    "a crowded office",
    "a broken umbrella",
];
const RELATIONS: [&str; 4] = [
    "while the caption praises it",
    "and the text describes it plainly",
    "yet the words celebrate the scene",
    "which the text reports at face value",
];
const CLOSERS: [&str; 3] = [
    "so the tone follows.",
    "which settles the reading.",
    "and the pairing is clear.",
];

fn synthetic_content(req: &ChatRequest, text: &str) -> String {
    let images = req.image_urls().join("|");
    let seed = req.seed.unwrap_or(u64::MAX).to_le_bytes();
    let temp = req.temperature.to_bits().to_le_bytes();
    let base = digest(&[req.model.as_bytes(), images.as_bytes()]);
    let full = digest(&[req.model.as_bytes(), images.as_bytes(), &seed, &temp, text.as_bytes()]);

    let mut rationale = format!(
        "{} {} {} {}",
        OPENERS[full[4] as usize % OPENERS.len()],
        SUBJECTS[base[5] as usize % SUBJECTS.len()],
        RELATIONS[full[6] as usize % RELATIONS.len()],
        CLOSERS[full[7] as usize % CLOSERS.len()]
    );
    if let Some(limit) = prompt_word_limit(text).filter(|&l| l > 0) {
        let words: Vec<&str> = rationale.split_whitespace().collect();
        if words.len() > limit as usize {
            rationale = words[..limit as usize].join(" ");
        }
    }

    if text.contains("\"score\"") {
        let lean = f64::from(base[0]) / 255.0;
        let jitter = (f64::from(full[1]) / 255.0 - 0.5) * 0.3;
        let score = ((lean + jitter).clamp(0.0, 1.0) * 100.0).round() / 100.0;
        serde_json::json!({"rationale": rationale, "score": score}).to_string()
    } else {
        let mut labels = vec!["sarcastic", "non_sarcastic"];
        if text.contains("\"neutral\"") {
            labels.push("neutral");
        }
        let lean = base[0] as usize % 2;
        let label = if full[1].is_multiple_of(5) {
            let others: Vec<&str> = labels
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != lean)
                .map(|(_, l)| *l)
                .collect();
            others[full[2] as usize % others.len()]
        } else {
            labels[lean]
        };
        let confidence = (50.0 + f64::from(full[3]) / 255.0 * 50.0).round() / 100.0;
        serde_json::json!({"label": label, "rationale": rationale, "confidence": confidence}).to_string()
    }
}

fn synthetic_logprobs(content: &str, salt: &[u8; 32]) -> Vec<f64> {
    content
        .split_whitespace()
        .enumerate()
        .map(|(i, _)| -((f64::from(salt[(i + 8) % 32]) / 255.0 * 1.5) * 10_000.0).round() / 10_000.0)
        .collect()
}

const MALFORMED_REPLY: &str = "Sure! Looking at the image and the text together, my answer is";

/// Computes the reply to a request, or `None` when no rule matches.
pub fn respond(script: &MockScript, req: &ChatRequest) -> Option<(ChatResponse, u64)> {
    let text = req.prompt_text();
    let rule = script.rules.iter().find(|r| r.matches(req, &text))?;
    let rung = request_rung(req);
    let before = |k: Option<usize>| k.is_some_and(|k| rung.is_none_or(|r| r < k));

    let mut content = rule
        .response
        .content
        .clone()
        .unwrap_or_else(|| synthetic_content(req, &text));
    let mut finish = rule
        .response
        .finish_reason
        .clone()
        .unwrap_or_else(|| "stop".to_string());
    if rule.malformed || before(rule.malformed_until_rung) {
        content = MALFORMED_REPLY.to_string();
        finish = "stop".to_string();
    } else if before(rule.over_length_until_rung) {
        let cut = content
            .char_indices()
            .nth(content.chars().count() / 2)
            .map_or(0, |(i, _)| i);
        content.truncate(cut);
        finish = "length".to_string();
    }

    let logprobs = req.logprobs.then(|| {
        let values = match &rule.response.logprobs {
            Some(v) => v.clone(),
            None => synthetic_logprobs(&content, &digest(&[content.as_bytes(), req.model.as_bytes()])),
        };
        ChoiceLogprobs {
            content: Some(
                values
                    .into_iter()
                    .enumerate()
                    .map(|(i, logprob)| TokenLogprob {
                        token: format!("t{i}"),
                        logprob,
                    })
                    .collect(),
            ),
        }
    });
    let response = ChatResponse {
        choices: vec![Choice {
            index: 0,
            message: AssistantMessage {
                role: "assistant".to_string(),
                content: Some(content),
            },
            finish_reason: Some(finish),
            logprobs,
        }],
    };
    Some((response, rule.delay_ms))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    pub in_flight: usize,
    pub high_water: usize,
    pub requests: usize,
}

/// Decoding parameters of one received request, as seen by the server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub model: String,
    pub seed: Option<u64>,
    pub temperature: f64,
    pub word_limit: Option<u32>,
}

#[derive(Debug, Default)]
struct Gauge {
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    requests: AtomicUsize,
    rejected: AtomicU32,
}

impl Gauge {
    fn snapshot(&self) -> MockStats {
        MockStats {
            in_flight: self.in_flight.load(Ordering::SeqCst),
            high_water: self.high_water.load(Ordering::SeqCst),
            requests: self.requests.load(Ordering::SeqCst),
        }
    }
}

struct InFlight<'a>(&'a Gauge);

impl<'a> InFlight<'a> {
    fn enter(g: &'a Gauge) -> Self {
        let now = g.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        g.high_water.fetch_max(now, Ordering::SeqCst);
        g.requests.fetch_add(1, Ordering::SeqCst);
        InFlight(g)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

struct AppState {
    script: MockScript,
    gauge: Gauge,
    log: std::sync::Mutex<Vec<LoggedRequest>>,
}

fn error(status: StatusCode, message: impl Into<String>, kind: &str) -> Response {
    let body = ErrorBody {
        error: ErrorDetail {
            message: message.into(),
            kind: Some(kind.to_string()),
        },
    };
    (status, Json(body)).into_response()
}

async fn chat(State(state): State<Arc<AppState>>, Json(req): Json<ChatRequest>) -> Response {
    let _guard = InFlight::enter(&state.gauge);
    state.log.lock().unwrap().push(LoggedRequest {
        model: req.model.clone(),
        seed: req.seed,
        temperature: req.temperature,
        word_limit: prompt_word_limit(&req.prompt_text()),
    });
    if state.gauge.rejected.fetch_add(1, Ordering::SeqCst) < state.script.reject_requests {
        return error(StatusCode::SERVICE_UNAVAILABLE, "scripted rejection", "unavailable");
    }
    match respond(&state.script, &req) {
        Some((resp, delay_ms)) => {
            if delay_ms > 0 {
                tokio::time::sleep(Duration::from_millis(delay_ms)).await;
            }
            Json(resp).into_response()
        }
        None => error(
            StatusCode::BAD_REQUEST,
            "no scripted rule matches the request",
            "no_rule",
        ),
    }
}

async fn embeddings(Json(req): Json<EmbeddingRequest>) -> Response {
    let texts: Vec<&str> = req.texts.iter().map(String::as_str).collect();
    match HashingEncoder::default().encode(&texts) {
        Ok(embeddings) => Json(EmbeddingResponse { embeddings }).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string(), "encoder"),
    }
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<MockStats> {
    Json(state.gauge.snapshot())
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .route("/embeddings", post(embeddings))
        .route("/mock/stats", get(stats))
        .with_state(state)
}

/// A running mock server. Dropping the handle stops it.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub async fn start(script: MockScript, addr: SocketAddr) -> Result<Self, MockError> {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| MockError::Bind { addr, source })?;
        let addr = listener
            .local_addr()
            .map_err(|source| MockError::Bind { addr, source })?;
        let state = Arc::new(AppState {
            script,
            gauge: Gauge::default(),
            log: std::sync::Mutex::new(Vec::new()),
        });
        let (tx, rx) = oneshot::channel();
        let app = router(Arc::clone(&state));
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(MockServer {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to use as a model's `endpoint_url`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> MockStats {
        self.state.gauge.snapshot()
    }

    /// Requests received so far, in arrival order.
    pub fn request_log(&self) -> Vec<LoggedRequest> {
        self.state.log.lock().unwrap().clone()
    }

    pub fn reset_stats(&self) {
        self.state.log.lock().unwrap().clear();
        let g = &self.state.gauge;
        g.high_water.store(g.in_flight.load(Ordering::SeqCst), Ordering::SeqCst);
        g.requests.store(0, Ordering::SeqCst);
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    /// Serves until the process is stopped.
    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::{ChatMessage, ContentPart, ImageUrl};

    fn req(model: &str, text: &str, seed: Option<u64>, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: model.into(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: vec![
                    ContentPart::Text { text: text.into() },
                    ContentPart::ImageUrl {
                        image_url: ImageUrl {
                            url: "data:image/png;base64,AAAA".into(),
                        },
                    },
                ],
            }],
            temperature,
            seed,
            logprobs: false,
            max_tokens: None,
        }
    }

    #[test]
    fn word_limit_extraction_uses_last_phrase() {
        assert_eq!(prompt_word_limit("say 3 words. limit to 140 words."), Some(140));
        assert_eq!(prompt_word_limit("no limit here"), None);
    }

    #[test]
    fn rung_recovery() {
        assert_eq!(request_rung(&req("m", "limit to 150 words", None, 0.0)), Some(1));
        assert_eq!(request_rung(&req("m", "limit to 0 words", None, 0.0)), Some(16));
        assert_eq!(request_rung(&req("m", "limit to 0 words", Some(42), 0.1)), Some(17));
        assert_eq!(request_rung(&req("m", "limit to 0 words", Some(52), 1.0)), Some(27));
    }

    #[test]
    fn first_matching_rule_wins() {
        let script = MockScript::from_json(
            r#"{"rules": [
                {"model": "a", "response": {"content": "A"}},
                {"seed": 42, "temperature": 0.1, "response": {"content": "T"}},
                {"response": {"content": "fallback"}}
            ]}"#,
        )
        .unwrap();
        let content = |r: &ChatRequest| {
            respond(&script, r).unwrap().0.choices[0]
                .message
                .content
                .clone()
                .unwrap()
        };
        assert_eq!(content(&req("a", "x", None, 0.0)), "A");
        assert_eq!(content(&req("b", "x", Some(42), 0.1)), "T");
        assert_eq!(content(&req("b", "x", Some(42), 0.2)), "fallback");
    }

    #[test]
    fn over_length_until_rung() {
        let script = MockScript::from_json(
            r#"{"rules": [{"over_length_until_rung": 3, "response": {"content": "{\"label\": \"sarcastic\"}"}}]}"#,
        )
        .unwrap();
        let finish = |wl: u32| {
            respond(&script, &req("m", &format!("limit to {wl} words"), None, 0.0))
                .unwrap()
                .0
                .choices[0]
                .finish_reason
                .clone()
                .unwrap()
        };
        assert_eq!(finish(150), "length");
        assert_eq!(finish(140), "length");
        assert_eq!(finish(130), "stop");
    }

    #[test]
    fn synthetic_replies_are_deterministic_and_follow_format() {
        let script = MockScript::synthetic();
        let r = req(
            "m",
            r#"{"label": "sarcastic" | "non_sarcastic" | "neutral"} limit to 150 words"#,
            None,
            0.0,
        );
        let a = respond(&script, &r).unwrap().0;
        let b = respond(&script, &r).unwrap().0;
        assert_eq!(a, b);
        let v: serde_json::Value = serde_json::from_str(a.choices[0].message.content.as_deref().unwrap()).unwrap();
        assert!(["sarcastic", "non_sarcastic", "neutral"].contains(&v["label"].as_str().unwrap()));
        let s = req("m", r#"{"rationale": "...", "score": 0.5} limit to 5 words"#, None, 0.0);
        let out = respond(&script, &s).unwrap().0;
        let v: serde_json::Value = serde_json::from_str(out.choices[0].message.content.as_deref().unwrap()).unwrap();
        let score = v["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
        assert!(v["rationale"].as_str().unwrap().split_whitespace().count() <= 5);
    }

    #[test]
    fn script_errors() {
        assert!(MockScript::from_json("{").is_err());
        assert!(MockScript::from_json(r#"{"rules": [{"bogus": 1}]}"#).is_err());
        assert!(MockScript::from_json(r#"{"rules": [{"response": {"logprobs": [0.5]}}]}"#).is_err());
    }
}
