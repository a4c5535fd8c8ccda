use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinSet;

use sarceval_core::ladder::LadderLimits;
use sarceval_core::parser::parse;
use sarceval_core::runstore::{CellOutcome, RunRecord, RunStore, StoreError};
use sarceval_core::{CellKey, Corpus, MatrixSpec, ModelJudgment, PromptLibrary, TaskKind};

use crate::backend::{ChatBackend, ModelSpec};
use crate::retry::{parse_validator, query_with_retry_ladder, LadderError};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Cells in the full matrix.
    pub total_cells: usize,
    /// Cells not yet in the store when this call started.
    pub pending: usize,
    /// Cells stored with an accepted response.
    pub ok: usize,
    /// Cells stored as missing after the ladder ran out.
    pub missing: usize,
    /// Cells aborted by endpoint errors; not stored, retried on the next run.
    pub failed: usize,
    /// HTTP requests issued, transport retries included.
    pub requests: usize,
    /// First few abort reasons, for display.
    pub failures: Vec<String>,
}

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("parallelism must be at least 1")]
    ZeroParallelism,
    #[error("invalid model list: {0}")]
    InvalidModels(String),
    #[error("task {0} has no prompt variants")]
    MissingTask(TaskKind),
    #[error("run store: {0}")]
    Store(#[from] StoreError),
}

/// Checks short names: non-empty and unique.
pub fn validate_models(models: &[ModelSpec]) -> Result<(), MatrixError> {
    let mut seen = BTreeSet::new();
    for m in models {
        if m.short_name.trim().is_empty() {
            return Err(MatrixError::InvalidModels(format!(
                "model {:?} has an empty short name",
                m.full_name
            )));
        }
        if !seen.insert(m.short_name.as_str()) {
            return Err(MatrixError::InvalidModels(format!(
                "duplicate short name {:?}",
                m.short_name
            )));
        }
    }
    Ok(())
}

pub fn matrix_spec(corpus: &Corpus, models: &[ModelSpec], tasks: &[TaskKind], library: &PromptLibrary) -> MatrixSpec {
    let variants: BTreeMap<TaskKind, Vec<u32>> = tasks.iter().map(|&t| (t, library.variant_ids(t))).collect();
    MatrixSpec {
        models: models.iter().map(|m| m.short_name.clone()).collect(),
        variants,
        sample_ids: corpus.samples().iter().map(|s| s.id.clone()).collect(),
    }
}

enum CellResult {
    Stored(Box<RunRecord>, usize),
    Aborted(CellKey, String, usize),
}

const MAX_REPORTED_FAILURES: usize = 10;

/// Runs every cell of the matrix that the store does not hold yet.
///
/// Cells run concurrently; each endpoint URL admits at most `parallelism`
/// cells at once, and each cell's ladder is sequential, so no endpoint sees
/// more than `parallelism` requests in flight. Records reach the store
/// through one channel and are appended in arrival order.
#[allow(clippy::too_many_arguments)]
pub async fn run_matrix<B: ChatBackend + 'static>(
    backend: Arc<B>,
    corpus: &Corpus,
    models: &[ModelSpec],
    tasks: &[TaskKind],
    library: &PromptLibrary,
    parallelism: usize,
    limits: LadderLimits,
    store: &mut RunStore,
) -> Result<RunSummary, MatrixError> {
    if parallelism == 0 {
        return Err(MatrixError::ZeroParallelism);
    }
    validate_models(models)?;
    for &t in tasks {
        if library.variants(t).is_empty() {
            return Err(MatrixError::MissingTask(t));
        }
    }
    let spec = matrix_spec(corpus, models, tasks, library);
    let pending = store.pending_cells(&spec);
    let mut summary = RunSummary {
        total_cells: spec.len(),
        pending: pending.len(),
        ..RunSummary::default()
    };
    if pending.is_empty() {
        return Ok(summary);
    }

    let models_by_name: HashMap<&str, Arc<ModelSpec>> = models
        .iter()
        .map(|m| (m.short_name.as_str(), Arc::new(m.clone())))
        .collect();
    let mut gates: HashMap<&str, Arc<Semaphore>> = HashMap::new();
    for m in models {
        gates
            .entry(m.endpoint_url.as_str())
            .or_insert_with(|| Arc::new(Semaphore::new(parallelism)));
    }

    let (tx, mut rx) = mpsc::channel::<CellResult>(parallelism.max(16));
    let mut workers = JoinSet::new();
    for key in pending {
        let model = Arc::clone(&models_by_name[key.model.as_str()]);
        let gate = Arc::clone(&gates[model.endpoint_url.as_str()]);
        let template = library
            .get(key.task, key.variant_id)
            .expect("pending cells come from the library")
            .clone();
        let sample = corpus
            .get(&key.sample_id)
            .expect("pending cells come from the corpus")
            .clone();
        let backend = Arc::clone(&backend);
        let tx = tx.clone();
        workers.spawn(async move {
            let Ok(_permit) = gate.acquire_owned().await else {
                return;
            };
            let result =
                query_with_retry_ladder(&*backend, &model, &template, &sample, &parse_validator, &limits).await;
            let msg = match result {
                Ok((raw, trace)) => {
                    let requests = count_requests(&trace);
                    let judgment = parse(&raw, &key);
                    CellResult::Stored(
                        Box::new(RunRecord::new(key, CellOutcome::Ok, Some(raw), judgment, trace)),
                        requests,
                    )
                }
                Err(LadderError::Exhausted { trace, last }) => {
                    let requests = count_requests(&trace);
                    let judgment =
                        ModelJudgment::missing(&key, format!("retry ladder exhausted after {} attempts", trace.len()));
                    CellResult::Stored(
                        Box::new(RunRecord::new(key, CellOutcome::Exhausted, last, judgment, trace)),
                        requests,
                    )
                }
                Err(e) => {
                    let requests = e.trace().map(count_requests).unwrap_or(0);
                    CellResult::Aborted(key, e.to_string(), requests)
                }
            };
            let _ = tx.send(msg).await;
        });
    }
    drop(tx);

    while let Some(msg) = rx.recv().await {
        match msg {
            CellResult::Stored(record, requests) => {
                summary.requests += requests;
                if let Err(e) = store.append_record(&record) {
                    workers.abort_all();
                    return Err(e.into());
                }
                match record.outcome {
                    CellOutcome::Ok => summary.ok += 1,
                    CellOutcome::Exhausted => summary.missing += 1,
                }
            }
            CellResult::Aborted(key, reason, requests) => {
                summary.requests += requests;
                summary.failed += 1;
                if summary.failures.len() < MAX_REPORTED_FAILURES {
                    summary.failures.push(format!("{key}: {reason}"));
                }
            }
        }
    }
    while workers.join_next().await.is_some() {}
    Ok(summary)
}

fn count_requests(trace: &sarceval_core::ladder::LadderTrace) -> usize {
    trace.attempts.iter().map(|a| 1 + a.transport_retries as usize).sum()
}
