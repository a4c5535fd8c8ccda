use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sarceval_core::corpus::sniff_mime;
use sarceval_core::ladder::{Decoding, GenerationParams};
use sarceval_core::parser::FinishReason;
use sarceval_core::prompt::{MessagePart, RenderedPrompt};
use sarceval_core::{ImageRef, RawResponse};

use crate::wire::{ChatMessage, ChatRequest, ChatResponse, ContentPart, ErrorBody, ImageUrl};

/// One model behind a chat-completions endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Name sent in the request body.
    pub full_name: String,
    /// Name used in records and tables, e.g. `gpt-4o` or `qw2-7B`.
    pub short_name: String,
    /// Base URL; requests go to `{endpoint_url}/chat/completions`.
    pub endpoint_url: String,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default)]
    pub supports_logprobs: bool,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum QueryError {
    /// Connection failures, timeouts, 429 and 5xx replies. Retryable.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint rejected the request (HTTP {status}): {message}")]
    Protocol { status: u16, message: String },
    #[error("authentication failed: {0}")]
    Auth(String),
}

impl QueryError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, QueryError::Transport(_))
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn query(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<RawResponse, QueryError>;
}

pub fn image_data_uri(image: &ImageRef) -> std::io::Result<String> {
    let bytes = image.read_bytes()?;
    Ok(format!(
        "data:{};base64,{}",
        sniff_mime(&bytes),
        base64::engine::general_purpose::STANDARD.encode(&bytes)
    ))
}

/// Builds the request body for one attempt.
pub fn build_request(
    model: &ModelSpec,
    prompt: &RenderedPrompt,
    params: &GenerationParams,
    max_tokens: Option<u32>,
) -> Result<ChatRequest, QueryError> {
    if prompt.image_count() != 1 {
        return Err(QueryError::Protocol {
            status: 0,
            message: format!("prompt must carry exactly one image, found {}", prompt.image_count()),
        });
    }
    let mut content = Vec::with_capacity(prompt.parts.len());
    for part in &prompt.parts {
        content.push(match part {
            MessagePart::Text(text) => ContentPart::Text { text: text.clone() },
            MessagePart::Image(img) => ContentPart::ImageUrl {
                image_url: ImageUrl {
                    url: image_data_uri(img).map_err(|e| QueryError::Protocol {
                        status: 0,
                        message: format!("cannot read image {}: {e}", img.display_ref()),
                    })?,
                },
            },
        });
    }
    let seed = match params.decoding {
        Decoding::Greedy => None,
        Decoding::Seeded { seed, .. } => Some(seed),
    };
    Ok(ChatRequest {
        model: model.full_name.clone(),
        messages: vec![ChatMessage {
            role: "user".to_string(),
            content,
        }],
        temperature: params.temperature(),
        seed,
        logprobs: params.logprobs_requested,
        max_tokens,
    })
}

/// Converts the first choice of a response body.
pub fn read_response(body: ChatResponse, latency_ms: u64) -> Result<RawResponse, QueryError> {
    let choice = body.choices.into_iter().next().ok_or_else(|| QueryError::Protocol {
        status: 200,
        message: "response has no choices".to_string(),
    })?;
    let token_logprobs = choice
        .logprobs
        .and_then(|l| l.content)
        .map(|toks| toks.into_iter().map(|t| t.logprob).collect());
    Ok(RawResponse {
        text: choice.message.content.unwrap_or_default(),
        token_logprobs,
        finish_reason: FinishReason::from_wire(choice.finish_reason.as_deref()),
        latency_ms,
    })
}

/// Chat-completions client over HTTP.
#[derive(Debug, Clone)]
pub struct HttpClient {
    http: reqwest::Client,
    max_tokens: Option<u32>,
}

impl HttpClient {
    /// `max_tokens` is the fixed per-run output budget sent with every
    /// request; it does not follow the in-prompt word limit.
    pub fn new(timeout: Duration, max_tokens: Option<u32>) -> Result<Self, QueryError> {
        let http = reqwest::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout)
            .build()
            .map_err(|e| QueryError::Transport(e.to_string()))?;
        Ok(HttpClient { http, max_tokens })
    }
}

pub fn completions_url(endpoint_url: &str) -> String {
    format!("{}/chat/completions", endpoint_url.trim_end_matches('/'))
}

pub(crate) fn bearer_token(env_name: &Option<String>) -> Result<Option<String>, QueryError> {
    match env_name {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| QueryError::Auth(format!("environment variable {name} is not set"))),
    }
}

fn classify_status(status: reqwest::StatusCode, body: &str) -> QueryError {
    let message = serde_json::from_str::<ErrorBody>(body)
        .map(|b| b.error.message)
        .unwrap_or_else(|_| body.chars().take(500).collect());
    let code = status.as_u16();
    match code {
        401 | 403 => QueryError::Auth(format!("HTTP {code}: {message}")),
        408 | 429 => QueryError::Transport(format!("HTTP {code}: {message}")),
        500..=599 => QueryError::Transport(format!("HTTP {code}: {message}")),
        _ => QueryError::Protocol { status: code, message },
    }
}

#[async_trait]
impl ChatBackend for HttpClient {
    async fn query(
        &self,
        model: &ModelSpec,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<RawResponse, QueryError> {
        let body = build_request(model, prompt, params, self.max_tokens)?;
        let mut req = self.http.post(completions_url(&model.endpoint_url)).json(&body);
        if let Some(token) = bearer_token(&model.auth_token_env)? {
            req = req.bearer_auth(token);
        }
        let started = Instant::now();
        let resp = req.send().await.map_err(|e| QueryError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().await.map_err(|e| QueryError::Transport(e.to_string()))?;
        let latency_ms = started.elapsed().as_millis() as u64;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| QueryError::Protocol {
            status: status.as_u16(),
            message: format!("malformed response body: {e}"),
        })?;
        read_response(parsed, latency_ms)
    }
}
