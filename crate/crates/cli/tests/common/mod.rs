#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sarceval_client::{MockScript, MockServer};

pub const BIN: &str = env!("CARGO_BIN_EXE_sarceval");

pub fn prompts_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../prompts")
        .canonicalize()
        .unwrap()
}

/// Writes `n` samples with small PNG-headed image files and a manifest.
pub fn write_corpus(dir: &Path, n: usize) -> PathBuf {
    let images = dir.join("images");
    fs::create_dir_all(&images).unwrap();
    let mut lines = String::new();
    for i in 0..n {
        let name = format!("s{i:02}.png");
        fs::write(
            images.join(&name),
            [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, i as u8],
        )
        .unwrap();
        let label = if i % 2 == 0 { "sarcastic" } else { "non_sarcastic" };
        let source = if i < n / 2 { "twitter" } else { "reddit" };
        lines.push_str(&format!(
            "{{\"id\": \"s{i:02}\", \"text\": \"caption {i}: what a great day\", \"image\": \"images/{name}\", \"label\": \"{label}\", \"source\": \"{source}\"}}\n"
        ));
    }
    let manifest = dir.join("corpus.jsonl");
    fs::write(&manifest, lines).unwrap();
    manifest
}

/// Script used by the end-to-end runs: synthesized judgments, one sample
/// that needs a few ladder rungs, and one model/sample pair that never
/// produces valid output.
pub const E2E_SCRIPT: &str = r#"{"rules": [
    {"model": "mock-b-full", "prompt_contains": "caption 5:", "malformed": true},
    {"prompt_contains": "caption 3:", "over_length_until_rung": 4, "delay_ms": 3},
    {"delay_ms": 3}
]}"#;

pub fn write_config(dir: &Path, endpoint: &str, run_dir: &Path, max_attempts: usize) -> PathBuf {
    let cfg = format!(
        r#"corpus = "corpus.jsonl"
prompts = "{prompts}"
run_dir = "{run}"
tasks = ["BSC", "TSC", "SCS", "LCS"]
parallelism = 4
max_tokens = 512
timeout_secs = 10

[ladder]
max_attempts = {max_attempts}
transport_tries = 3
backoff_ms = 5

[[models]]
full_name = "mock-a-full"
short_name = "mock-a"
endpoint_url = "{endpoint}"
supports_logprobs = true

[[models]]
full_name = "mock-b-full"
short_name = "mock-b"
endpoint_url = "{endpoint}"
supports_logprobs = true
"#,
        prompts = prompts_dir().display(),
        run = run_dir.display(),
    );
    let path = dir.join("run.toml");
    fs::write(&path, cfg).unwrap();
    path
}

pub struct Mock {
    pub rt: tokio::runtime::Runtime,
    pub server: Option<MockServer>,
}

impl Mock {
    pub fn start(script: &str) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        let server = rt
            .block_on(MockServer::start(
                MockScript::from_json(script).unwrap(),
                "127.0.0.1:0".parse().unwrap(),
            ))
            .unwrap();
        Mock {
            rt,
            server: Some(server),
        }
    }

    pub fn url(&self) -> String {
        self.server.as_ref().unwrap().base_url()
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        if let Some(s) = self.server.take() {
            self.rt.block_on(s.shutdown());
        }
    }
}

pub fn sarceval(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

pub fn count_lines(path: &Path) -> usize {
    fs::read(path)
        .map(|b| b.iter().filter(|&&c| c == b'\n').count())
        .unwrap_or(0)
}

/// Contents of every file in a metrics directory, by name.
pub fn read_tables(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}
