use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use sarceval_client::ModelSpec;
use sarceval_core::ladder::{LadderLimits, DEFAULT_MAX_ATTEMPTS};
use sarceval_core::runstore::digest_json;
use sarceval_core::{PromptLibrary, TaskKind};

fn default_parallelism() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

fn default_tasks() -> Vec<TaskKind> {
    TaskKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_transport_tries")]
    pub transport_tries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

fn default_transport_tries() -> u32 {
    LadderLimits::default().transport_tries
}

fn default_backoff() -> u64 {
    LadderLimits::default().backoff_ms
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            max_attempts: default_max_attempts(),
            transport_tries: default_transport_tries(),
            backoff_ms: default_backoff(),
        }
    }
}

impl From<&LadderConfig> for LadderLimits {
    fn from(c: &LadderConfig) -> Self {
        LadderLimits {
            max_attempts: c.max_attempts,
            transport_tries: c.transport_tries,
            backoff_ms: c.backoff_ms,
        }
    }
}

/// Run configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    pub prompts: PathBuf,
    pub run_dir: PathBuf,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskKind>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Output token budget sent with every request.
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub ladder: LadderConfig,
    pub models: Vec<ModelSpec>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.corpus, &mut cfg.prompts, &mut cfg.run_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            bail!("config lists no models");
        }
        if self.tasks.is_empty() {
            bail!("config lists no tasks");
        }
        if self.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if self.ladder.max_attempts == 0 {
            bail!("ladder.max_attempts must be at least 1");
        }
        if !self.prompts.is_dir() {
            bail!("prompt library {} is not a directory", self.prompts.display());
        }
        if !self.corpus.is_file() {
            bail!("corpus manifest {} does not exist", self.corpus.display());
        }
        Ok(())
    }

    /// Digest of everything that determines what a cell's result means:
    /// model identities, tasks, ladder bound, output budget and the
    /// template texts. Endpoint URLs, credentials, parallelism and
    /// timeouts are operational and left out, so a run can resume against
    /// a restarted endpoint.
    pub fn digest(&self, library: &PromptLibrary) -> String {
        let models: Vec<_> = self
            .models
            .iter()
            .map(|m| (&m.full_name, &m.short_name, m.supports_logprobs))
            .collect();
        let templates: Vec<_> = self
            .tasks
            .iter()
            .flat_map(|&t| library.variants(t).iter().map(move |v| (t, v.variant_id, v.body())))
            .collect();
        digest_json(&(
            models,
            &self.tasks,
            self.ladder.max_attempts,
            self.max_tokens,
            templates,
        ))
    }
}
