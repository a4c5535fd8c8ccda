//! Randomized acceptance points against an in-process backend.

use std::sync::Mutex;

use async_trait::async_trait;
use proptest::prelude::*;
use sarceval_client::{query_with_retry_ladder, ChatBackend, LadderError, ModelSpec, QueryError};
use sarceval_core::ladder::{rung_of, AttemptOutcome, GenerationParams, LadderLimits};
use sarceval_core::prompt::{load_prompt_library, RenderedPrompt};
use sarceval_core::{CellKey, GoldLabel, ImageRef, RawResponse, Sample, TaskKind};

struct Recorder {
    seen: Mutex<Vec<(GenerationParams, String)>>,
}

#[async_trait]
impl ChatBackend for Recorder {
    async fn query(
        &self,
        _: &ModelSpec,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<RawResponse, QueryError> {
        self.seen.lock().unwrap().push((*params, prompt.text()));
        Ok(RawResponse::text("x"))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn traces_follow_the_ladder(accept_at in 1usize..70, max_attempts in 1usize..60) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_time().build().unwrap();
        let lib = load_prompt_library(&std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../prompts")).unwrap();
        let sample = Sample {
            id: "s".into(), text: "t".into(), image: ImageRef::Inline(vec![1]),
            gold_label: GoldLabel::Sarcastic, source: "a".into(),
        };
        let model = ModelSpec {
            full_name: "m".into(), short_name: "m".into(), endpoint_url: "http://unused".into(),
            auth_token_env: None, supports_logprobs: false,
        };
        let backend = Recorder { seen: Mutex::new(Vec::new()) };
        let validator = move |_: &RawResponse, _: &CellKey| AttemptOutcome::Invalid;
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let accept = |raw: &RawResponse, key: &CellKey| {
            let n = calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1;
            if n == accept_at { AttemptOutcome::Ok } else { validator(raw, key) }
        };
        let limits = LadderLimits { max_attempts, transport_tries: 3, backoff_ms: 0 };
        let result = rt.block_on(query_with_retry_ladder(
            &backend, &model, lib.get(TaskKind::Lcs, 1).unwrap(), &sample, &accept, &limits,
        ));
        let trace = match &result {
            Ok((_, t)) => t.clone(),
            Err(LadderError::Exhausted { trace, .. }) => trace.clone(),
            Err(e) => panic!("{e}"),
        };
        trace.check().unwrap();
        prop_assert_eq!(trace.len(), accept_at.min(max_attempts));
        prop_assert_eq!(result.is_ok(), accept_at <= max_attempts);
        // Every request re-rendered the prompt with its rung's word limit.
        for (i, (params, text)) in backend.seen.lock().unwrap().iter().enumerate() {
            prop_assert_eq!(rung_of(params.decoding, params.word_limit), Some(i + 1));
            let limit_phrase = format!("limit to {} words", params.word_limit);
            prop_assert!(text.contains(&limit_phrase));
        }
    }
}
