//! Durable, resumable run storage.
//!
//! A run directory contains:
//!
//! * `manifest` - JSON [`RunManifest`] (identity, digests, status)
//! * `records.jsonl` - one [`RunRecord`] per line, append-only
//! * `corpus.jsonl` - snapshot of the evaluated corpus manifest
//! * `lock` - held exclusively by the writing process
//! * `metrics/` and `annotations/` - written by later stages
//!
//! Every append is fsynced before it returns. A torn final line left by a
//! crash is discarded when the store is reopened.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cell::{CellKey, MatrixSpec};
use crate::corpus::{load_manifest, Corpus, CorpusError};
use crate::ladder::LadderTrace;
use crate::parser::{ModelJudgment, RawResponse};

pub const RECORD_VERSION: u32 = 1;

const MANIFEST_FILE: &str = "manifest";
const RECORDS_FILE: &str = "records.jsonl";
const CORPUS_FILE: &str = "corpus.jsonl";
const LOCK_FILE: &str = "lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub corpus_hash: String,
    pub created_at: DateTime<Utc>,
    pub status: RunStatus,
}

/// How a cell ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutcome {
    /// A response passed validation.
    Ok,
    /// The retry ladder ran out; the judgment is missing.
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub v: u32,
    #[serde(flatten)]
    pub key: CellKey,
    pub outcome: CellOutcome,
    /// Last response received, if any.
    pub raw: Option<RawResponse>,
    pub judgment: ModelJudgment,
    pub ladder: LadderTrace,
    pub written_at: DateTime<Utc>,
}

impl RunRecord {
    pub fn new(
        key: CellKey,
        outcome: CellOutcome,
        raw: Option<RawResponse>,
        judgment: ModelJudgment,
        ladder: LadderTrace,
    ) -> Self {
        RunRecord {
            v: RECORD_VERSION,
            key,
            outcome,
            raw,
            judgment,
            ladder,
            written_at: Utc::now(),
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("run in {dir} was created with a different {field} (stored {stored}, requested {requested})")]
    DigestMismatch {
        dir: PathBuf,
        field: &'static str,
        stored: String,
        requested: String,
    },
    #[error("run directory {0} is locked by another process")]
    LockHeld(PathBuf),
    #[error("cell {0} already has a record")]
    DuplicateCell(CellKey),
    #[error("record key {key} does not match its judgment ({judgment})")]
    KeyMismatch { key: CellKey, judgment: CellKey },
    #[error("{path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("run is {0:?}, not running")]
    NotRunning(RunStatus),
    #[error("{0} is not a run directory (no manifest)")]
    NotARun(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Hex SHA-256 of a value's JSON encoding. Struct fields serialize in
/// declaration order and maps should be `BTreeMap`s, which makes the
/// encoding canonical for a given type.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("digest input serializes");
    hex::encode(Sha256::digest(bytes))
}

/// Writes `contents` to `path` through a temporary file and rename.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(io_at(&tmp))?;
        f.write_all(contents).map_err(io_at(&tmp))?;
        f.sync_all().map_err(io_at(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_at(path))
}

/// Complete lines of the records file, ignoring a torn tail. Returns the
/// parsed records and the byte length of the intact prefix.
fn scan_records(path: &Path) -> Result<(Vec<RunRecord>, u64), StoreError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_at(path)(e)),
    };
    let intact = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    for (i, line) in bytes[..intact].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec: RunRecord = serde_json::from_slice(line).map_err(|e| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok((records, intact as u64))
}

/// Reads the records of a run without taking the writer lock.
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>, StoreError> {
    scan_records(&dir.join(RECORDS_FILE)).map(|(r, _)| r)
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotARun(dir.to_path_buf())),
        Err(e) => return Err(io_at(&path)(e)),
    };
    serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
        path,
        line: 1,
        message: e.to_string(),
    })
}

/// Loads the corpus snapshot written when the run was created.
pub fn read_corpus(dir: &Path) -> Result<Corpus, StoreError> {
    Ok(load_manifest(&dir.join(CORPUS_FILE))?)
}

/// Exclusive writer handle on a run directory.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    manifest: RunManifest,
    records: File,
    index: HashSet<CellKey>,
    _lock: File,
}

impl RunStore {
    /// Creates a run in `dir`, or resumes the one already there. Resuming
    /// requires both digests to match the stored manifest.
    pub fn open(dir: &Path, config_digest: &str, corpus: &Corpus) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(io_at(&lock_path))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(StoreError::LockHeld(dir.to_path_buf())),
            Err(fs::TryLockError::Error(e)) => return Err(io_at(&lock_path)(e)),
        }

        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() {
            let mut m = read_manifest(dir)?;
            for (field, stored, requested) in [
                ("config_digest", &m.config_digest, config_digest),
                ("corpus_hash", &m.corpus_hash, corpus.content_hash()),
            ] {
                if stored != requested {
                    return Err(StoreError::DigestMismatch {
                        dir: dir.to_path_buf(),
                        field,
                        stored: stored.clone(),
                        requested: requested.to_string(),
                    });
                }
            }
            m.status = RunStatus::Running;
            m
        } else {
            corpus.export_manifest(&dir.join(CORPUS_FILE))?;
            RunManifest {
                run_id: uuid::Uuid::new_v4().to_string(),
                config_digest: config_digest.to_string(),
                corpus_hash: corpus.content_hash().to_string(),
                created_at: Utc::now(),
                status: RunStatus::Running,
            }
        };
        write_atomic(
            &manifest_path,
            &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )?;

        let records_path = dir.join(RECORDS_FILE);
        let (existing, intact) = scan_records(&records_path)?;
        let records = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records_path)
            .map_err(io_at(&records_path))?;
        let len = records.metadata().map_err(io_at(&records_path))?.len();
        if len > intact {
            records.set_len(intact).map_err(io_at(&records_path))?;
            records.sync_all().map_err(io_at(&records_path))?;
        }
        let index = existing.into_iter().map(|r| r.key).collect();
        Ok(RunStore {
            dir: dir.to_path_buf(),
            manifest,
            records,
            index,
            _lock: lock,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn run_id(&self) -> &str {
        &self.manifest.run_id
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, key: &CellKey) -> bool {
        self.index.contains(key)
    }

    /// Appends one record and fsyncs it.
    pub fn append_record(&mut self, record: &RunRecord) -> Result<(), StoreError> {
        if self.manifest.status != RunStatus::Running {
            return Err(StoreError::NotRunning(self.manifest.status));
        }
        let jkey = record.judgment.key();
        if jkey != record.key {
            return Err(StoreError::KeyMismatch {
                key: record.key.clone(),
                judgment: jkey,
            });
        }
        if self.index.contains(&record.key) {
            return Err(StoreError::DuplicateCell(record.key.clone()));
        }
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        let path = self.dir.join(RECORDS_FILE);
        self.records.write_all(&line).map_err(io_at(&path))?;
        self.records.sync_data().map_err(io_at(&path))?;
        self.index.insert(record.key.clone());
        Ok(())
    }

    /// Matrix cells without a stored record, in matrix order.
    pub fn pending_cells(&self, matrix: &MatrixSpec) -> Vec<CellKey> {
        matrix.cells().filter(|c| !self.index.contains(c)).collect()
    }

    pub fn records(&self) -> Result<Vec<RunRecord>, StoreError> {
        read_records(&self.dir)
    }

    pub fn set_status(&mut self, status: RunStatus) -> Result<(), StoreError> {
        self.manifest.status = status;
        write_atomic(
            &self.dir.join(MANIFEST_FILE),
            &serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes"),
        )
    }
}
