use std::time::Duration;

use sarceval_core::metrics::similarity::{SimilarityError, TokenEncoder};

use crate::backend::bearer_token;
use crate::wire::{EmbeddingRequest, EmbeddingResponse};

/// Token encoder backed by a remote embedding endpoint.
///
/// The endpoint receives `{"texts": [...]}` at `{endpoint_url}/embeddings`
/// and answers `{"embeddings": [[[f64; dim]; n_tokens]; n_texts]}`.
/// Blocking; do not call from inside an async runtime.
#[derive(Debug, Clone)]
pub struct HttpEncoder {
    url: String,
    auth_token_env: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpEncoder {
    pub fn new(endpoint_url: &str, auth_token_env: Option<String>, timeout: Duration) -> Result<Self, SimilarityError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| SimilarityError::Encoder(e.to_string()))?;
        Ok(HttpEncoder {
            url: format!("{}/embeddings", endpoint_url.trim_end_matches('/')),
            auth_token_env,
            http,
        })
    }
}

impl TokenEncoder for HttpEncoder {
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<Vec<f64>>>, SimilarityError> {
        let body = EmbeddingRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let mut req = self.http.post(&self.url).json(&body);
        if let Some(token) = bearer_token(&self.auth_token_env).map_err(|e| SimilarityError::Encoder(e.to_string()))? {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| SimilarityError::Encoder(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(SimilarityError::Encoder(format!(
                "embedding endpoint returned HTTP {status}"
            )));
        }
        let parsed: EmbeddingResponse = resp.json().map_err(|e| SimilarityError::Encoder(e.to_string()))?;
        if parsed.embeddings.len() != texts.len() {
            return Err(SimilarityError::Encoder(format!(
                "asked for {} texts, got {}",
                texts.len(),
                parsed.embeddings.len()
            )));
        }
        Ok(parsed.embeddings)
    }
}
