#![allow(dead_code)]

use std::path::PathBuf;

use sarceval_client::{MockScript, MockServer, ModelSpec};
use sarceval_core::prompt::load_prompt_library;
use sarceval_core::{Corpus, GoldLabel, ImageRef, PromptLibrary, Sample};

pub fn prompts_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../prompts")
}

pub fn library() -> PromptLibrary {
    load_prompt_library(&prompts_dir()).unwrap()
}

pub fn sample(i: usize) -> Sample {
    Sample {
        id: format!("s{i:03}"),
        text: format!("What a lovely day number {i}"),
        image: ImageRef::Inline(vec![0x89, b'P', b'N', b'G', i as u8, (i >> 8) as u8]),
        gold_label: if i.is_multiple_of(2) {
            GoldLabel::Sarcastic
        } else {
            GoldLabel::NonSarcastic
        },
        source: if i < 10 { "a".into() } else { "b".into() },
    }
}

pub fn corpus(n: usize) -> Corpus {
    Corpus::new((0..n).map(sample).collect()).unwrap()
}

pub fn model(server: &MockServer, short: &str) -> ModelSpec {
    ModelSpec {
        full_name: format!("{short}-full"),
        short_name: short.into(),
        endpoint_url: server.base_url(),
        auth_token_env: None,
        supports_logprobs: true,
    }
}

pub async fn serve(script: &str) -> MockServer {
    MockServer::start(MockScript::from_json(script).unwrap(), "127.0.0.1:0".parse().unwrap())
        .await
        .unwrap()
}
