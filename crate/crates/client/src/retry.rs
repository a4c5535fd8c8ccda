use std::time::Duration;

use thiserror::Error;

use sarceval_core::ladder::{rung_params, Attempt, AttemptOutcome, LadderLimits, LadderTrace};
use sarceval_core::parser::{parse, FinishReason, ParseStatus};
use sarceval_core::prompt::render;
use sarceval_core::{CellKey, PromptTemplate, RawResponse, Sample};

use crate::backend::{ChatBackend, ModelSpec, QueryError};

/// Decides whether a response ends the ladder.
pub type Validator<'a> = dyn Fn(&RawResponse, &CellKey) -> AttemptOutcome + Send + Sync + 'a;

/// Accepts a response that was not cut off by the output budget and
/// parses into a judgment.
pub fn parse_validator(raw: &RawResponse, key: &CellKey) -> AttemptOutcome {
    if raw.finish_reason == FinishReason::Length {
        return AttemptOutcome::OverLength;
    }
    match parse(raw, key).parse_status {
        ParseStatus::Failed => AttemptOutcome::Invalid,
        ParseStatus::Ok | ParseStatus::Repaired => AttemptOutcome::Ok,
    }
}

#[derive(Debug, Error)]
pub enum LadderError {
    #[error("retry ladder exhausted after {} attempts", trace.len())]
    Exhausted {
        trace: LadderTrace,
        last: Option<RawResponse>,
    },
    #[error("aborted after {} attempts: {error}", trace.len())]
    Aborted { error: QueryError, trace: LadderTrace },
    #[error("max_attempts must be at least 1")]
    InvalidLimits,
}

impl LadderError {
    pub fn trace(&self) -> Option<&LadderTrace> {
        match self {
            LadderError::Exhausted { trace, .. } | LadderError::Aborted { trace, .. } => Some(trace),
            LadderError::InvalidLimits => None,
        }
    }
}

/// Walks the ladder until `validator` accepts a response.
///
/// Each rung re-renders `template` with the rung's word limit. A transport
/// failure is retried on the same rung with doubling backoff; once
/// `limits.transport_tries` are spent, or on any protocol or auth error,
/// the ladder aborts.
pub async fn query_with_retry_ladder<B: ChatBackend + ?Sized>(
    backend: &B,
    model: &ModelSpec,
    template: &PromptTemplate,
    sample: &Sample,
    validator: &Validator<'_>,
    limits: &LadderLimits,
) -> Result<(RawResponse, LadderTrace), LadderError> {
    if limits.max_attempts == 0 {
        return Err(LadderError::InvalidLimits);
    }
    let key = CellKey::new(&model.short_name, template.task, template.variant_id, &sample.id);
    let mut trace = LadderTrace::default();
    let mut last = None;
    for rung in 1..=limits.max_attempts {
        let params = rung_params(rung).with_logprobs(model.supports_logprobs);
        let prompt = render(template, sample, params.word_limit);
        let mut tries = 0u32;
        let raw = loop {
            tries += 1;
            match backend.query(model, &prompt, &params).await {
                Ok(raw) => break raw,
                Err(e) if e.is_retryable() && tries < limits.transport_tries.max(1) => {
                    let wait = limits.backoff_ms.saturating_mul(1 << (tries - 1).min(16));
                    tokio::time::sleep(Duration::from_millis(wait)).await;
                }
                Err(error) => {
                    if error.is_retryable() {
                        trace.attempts.push(Attempt {
                            params,
                            outcome: AttemptOutcome::TransportError,
                            transport_retries: tries - 1,
                        });
                    }
                    return Err(LadderError::Aborted { error, trace });
                }
            }
        };
        let outcome = validator(&raw, &key);
        trace.attempts.push(Attempt {
            params,
            outcome,
            transport_retries: tries - 1,
        });
        if outcome == AttemptOutcome::Ok {
            return Ok((raw, trace));
        }
        last = Some(raw);
    }
    Err(LadderError::Exhausted { trace, last })
}
