use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use sarceval_core::metrics::alpha::{krippendorff_alpha, AlphaError, RatingsMatrix};
use sarceval_core::parser::Label;
use sarceval_core::runstore::{read_corpus, read_manifest, read_records, StoreError};
use sarceval_core::{CellKey, ImageRef, TaskKind};

pub const ANNOTATION_DIR: &str = "annotations";
pub const RATINGS_FILE: &str = "ratings.jsonl";

/// Row labels of the seven-point scale, from -3 to +3.
pub const LIKERT_LABELS: [&str; 7] = [
    "Strong Disagr. (-3)",
    "Mod. Disagr. (-2)",
    "Disagreement (-1)",
    "Uncertainty (0)",
    "Agreement (+1)",
    "Mod. Agreement (+2)",
    "Strong Agreement (+3)",
];

/// Collapsed rating used for agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeLevel {
    Disagreement,
    Uncertainty,
    Agreement,
}

impl ThreeLevel {
    pub fn from_likert(likert: i8) -> Self {
        match likert {
            l if l > 0 => ThreeLevel::Agreement,
            0 => ThreeLevel::Uncertainty,
            _ => ThreeLevel::Disagreement,
        }
    }
}

/// Deterministic item id: the first 16 hex digits of
/// sha256(run_id, NUL, cell key).
pub fn item_id(run_id: &str, key: &CellKey) -> String {
    let mut h = Sha256::new();
    h.update(run_id.as_bytes());
    h.update([0]);
    h.update(key.to_string().as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationItem {
    pub item_id: String,
    pub sample_id: String,
    pub text: String,
    /// Service path of the image bytes.
    pub image_url: String,
    pub task: TaskKind,
    pub model: String,
    pub variant_id: u32,
    pub label: Label,
    pub score: Option<f64>,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub annotator_id: String,
    pub item_id: String,
    pub likert: i8,
    pub submitted_at: DateTime<Utc>,
}

/// Which judgments of a run become items. Empty lists mean "all".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub variants: Vec<u32>,
    /// Allowed annotator ids; empty admits any non-empty id.
    #[serde(default)]
    pub annotators: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("run store: {0}")]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),
    #[error("annotator id must not be empty")]
    EmptyAnnotator,
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("likert value {0} is outside -3..=3")]
    LikertOutOfRange(i64),
    #[error("no ratings for model {model:?} on task {task}")]
    EmptyGroup { model: String, task: TaskKind },
    #[error("fewer than two annotators rated a common item")]
    InsufficientOverlap,
    #[error("corrupt ratings file at line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

impl AnnotateError {
    /// Machine-readable code for API responses.
    pub fn code(&self) -> &'static str {
        match self {
            AnnotateError::Store(_) | AnnotateError::Io { .. } | AnnotateError::Corrupt { .. } => "storage_error",
            AnnotateError::UnknownAnnotator(_) => "unknown_annotator",
            AnnotateError::EmptyAnnotator => "missing_annotator",
            AnnotateError::UnknownItem(_) => "unknown_item",
            AnnotateError::LikertOutOfRange(_) => "likert_out_of_range",
            AnnotateError::EmptyGroup { .. } => "empty_group",
            AnnotateError::InsufficientOverlap => "insufficient_overlap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub likert: i8,
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub model: String,
    pub task: TaskKind,
    pub n: usize,
    pub rows: Vec<DistributionRow>,
}

impl Distribution {
    /// Builds the seven-row table from per-level counts (-3 first).
    pub fn from_counts(model: &str, task: TaskKind, counts: [usize; 7]) -> Result<Self, AnnotateError> {
        let n: usize = counts.iter().sum();
        if n == 0 {
            return Err(AnnotateError::EmptyGroup {
                model: model.to_string(),
                task,
            });
        }
        let rows = counts
            .iter()
            .enumerate()
            .map(|(i, &count)| DistributionRow {
                likert: i as i8 - 3,
                label: LIKERT_LABELS[i].to_string(),
                count,
                percent: count as f64 * 100.0 / n as f64,
            })
            .collect();
        Ok(Distribution {
            model: model.to_string(),
            task,
            n,
            rows,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AlphaReport {
    Ok {
        alpha: f64,
        n_items: usize,
        n_annotators: usize,
    },
    /// Every mapped rating fell in one category.
    Degenerate {
        category: String,
        n_items: usize,
        n_annotators: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rated: usize,
    pub total: usize,
    pub remaining: usize,
}

struct Ratings {
    latest: BTreeMap<(String, String), Rating>,
    file: File,
    path: PathBuf,
}

/// Items of one run plus the ratings collected so far.
pub struct Session {
    items: Vec<AnnotationItem>,
    index: HashMap<String, usize>,
    images: HashMap<String, ImageRef>,
    annotators: BTreeSet<String>,
    ratings: Mutex<Ratings>,
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> AnnotateError + '_ {
    move |source| AnnotateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_ratings(
    path: &Path,
    known: &HashMap<String, usize>,
) -> Result<BTreeMap<(String, String), Rating>, AnnotateError> {
    let mut latest = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(latest),
        Err(e) => return Err(io_at(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_at(path))?;
    let n = lines.len();
    for (i, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Rating>(&line) {
            Ok(r) => {
                if known.contains_key(&r.item_id) {
                    latest.insert((r.annotator_id.clone(), r.item_id.clone()), r);
                }
            }
            // A torn final line from an interrupted write is dropped.
            Err(_) if i + 1 == n => {}
            Err(e) => {
                return Err(AnnotateError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(latest)
}

fn drop_torn_tail(path: &Path) -> Result<(), AnnotateError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_at(path)(e)),
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let f = OpenOptions::new().write(true).open(path).map_err(io_at(path))?;
        f.set_len(keep as u64).map_err(io_at(path))?;
    }
    Ok(())
}

impl Session {
    /// Opens a session over a run directory. Items are the run's
    /// non-missing judgments that pass `config`, ordered by item id.
    pub fn open(run_dir: &Path, config: &SessionConfig) -> Result<Self, AnnotateError> {
        let manifest = read_manifest(run_dir)?;
        let corpus = read_corpus(run_dir)?;
        let records = read_records(run_dir)?;
        let keep = |list: &[String], v: &String| list.is_empty() || list.contains(v);
        let mut items = Vec::new();
        for r in records {
            let j = &r.judgment;
            if j.is_missing()
                || !keep(&config.models, &r.key.model)
                || !(config.tasks.is_empty() || config.tasks.contains(&r.key.task))
                || !(config.variants.is_empty() || config.variants.contains(&r.key.variant_id))
            {
                continue;
            }
            let Some(sample) = corpus.get(&r.key.sample_id) else {
                continue;
            };
            let id = item_id(&manifest.run_id, &r.key);
            items.push(AnnotationItem {
                image_url: format!("/items/{id}/image"),
                item_id: id,
                sample_id: sample.id.clone(),
                text: sample.text.clone(),
                task: r.key.task,
                model: r.key.model.clone(),
                variant_id: r.key.variant_id,
                label: j.label,
                score: j.score,
                rationale: j.rationale.clone(),
            });
        }
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        items.dedup_by(|a, b| a.item_id == b.item_id);
        let index = items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id.clone(), i))
            .collect();
        let images = corpus
            .samples()
            .iter()
            .map(|s| (s.id.clone(), s.image.clone()))
            .collect();

        let dir = run_dir.join(ANNOTATION_DIR);
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        let path = dir.join(RATINGS_FILE);
        let latest = load_ratings(&path, &index)?;
        drop_torn_tail(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_at(&path))?;
        Ok(Session {
            items,
            index,
            images,
            annotators: config.annotators.iter().cloned().collect(),
            ratings: Mutex::new(Ratings { latest, file, path }),
        })
    }

    pub fn items(&self) -> &[AnnotationItem] {
        &self.items
    }

    pub fn item(&self, id: &str) -> Result<&AnnotationItem, AnnotateError> {
        self.index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| AnnotateError::UnknownItem(id.to_string()))
    }

    pub fn image(&self, id: &str) -> Result<Vec<u8>, AnnotateError> {
        let item = self.item(id)?;
        let image = &self.images[&item.sample_id];
        image.read_bytes().map_err(|source| AnnotateError::Io {
            path: PathBuf::from(image.display_ref()),
            source,
        })
    }

    fn check_annotator(&self, annotator: &str) -> Result<(), AnnotateError> {
        if annotator.is_empty() {
            return Err(AnnotateError::EmptyAnnotator);
        }
        if !self.annotators.is_empty() && !self.annotators.contains(annotator) {
            return Err(AnnotateError::UnknownAnnotator(annotator.to_string()));
        }
        Ok(())
    }

    /// First item, in item-id order, this annotator has not rated.
    pub fn next_item(&self, annotator: &str) -> Result<Option<&AnnotationItem>, AnnotateError> {
        self.check_annotator(annotator)?;
        let ratings = self.ratings.lock().unwrap();
        Ok(self.items.iter().find(|it| {
            !ratings
                .latest
                .contains_key(&(annotator.to_string(), it.item_id.clone()))
        }))
    }

    /// Stores a rating, replacing any earlier one by the same annotator on
    /// the same item. The line is synced to disk before this returns.
    pub fn submit(&self, annotator: &str, item: &str, likert: i64) -> Result<Rating, AnnotateError> {
        self.check_annotator(annotator)?;
        self.item(item)?;
        if !(-3..=3).contains(&likert) {
            return Err(AnnotateError::LikertOutOfRange(likert));
        }
        let rating = Rating {
            annotator_id: annotator.to_string(),
            item_id: item.to_string(),
            likert: likert as i8,
            submitted_at: Utc::now(),
        };
        let mut line = serde_json::to_string(&rating).expect("rating serializes");
        line.push('\n');
        let mut guard = self.ratings.lock().unwrap();
        let r = &mut *guard;
        r.file.write_all(line.as_bytes()).map_err(io_at(&r.path))?;
        r.file.sync_data().map_err(io_at(&r.path))?;
        r.latest
            .insert((rating.annotator_id.clone(), rating.item_id.clone()), rating.clone());
        Ok(rating)
    }

    pub fn progress(&self, annotator: &str) -> Result<Progress, AnnotateError> {
        self.check_annotator(annotator)?;
        let ratings = self.ratings.lock().unwrap();
        let rated = ratings.latest.keys().filter(|(a, _)| a == annotator).count();
        Ok(Progress {
            rated,
            total: self.items.len(),
            remaining: self.items.len() - rated,
        })
    }

    fn group_ratings(&self, model: &str, task: TaskKind) -> Vec<Rating> {
        let ratings = self.ratings.lock().unwrap();
        ratings
            .latest
            .values()
            .filter(|r| {
                let it = &self.items[self.index[&r.item_id]];
                it.model == model && it.task == task
            })
            .cloned()
            .collect()
    }

    /// Per-level share of all ratings on items of (model, task).
    pub fn distribution(&self, model: &str, task: TaskKind) -> Result<Distribution, AnnotateError> {
        let mut counts = [0usize; 7];
        for r in self.group_ratings(model, task) {
            counts[(r.likert + 3) as usize] += 1;
        }
        Distribution::from_counts(model, task, counts)
    }

    /// Agreement between annotators on the three-level mapping of their
    /// ratings for (model, task).
    pub fn alpha(&self, model: &str, task: TaskKind) -> Result<AlphaReport, AnnotateError> {
        let ratings = self.group_ratings(model, task);
        if ratings.is_empty() {
            return Err(AnnotateError::EmptyGroup {
                model: model.to_string(),
                task,
            });
        }
        alpha_report(
            ratings
                .iter()
                .map(|r| (r.annotator_id.as_str(), r.item_id.as_str(), r.likert)),
        )
    }
}

/// Three-level agreement over (annotator, item, likert) triples.
pub fn alpha_report<'a, I>(ratings: I) -> Result<AlphaReport, AnnotateError>
where
    I: IntoIterator<Item = (&'a str, &'a str, i8)>,
{
    let mut m = RatingsMatrix::new([ThreeLevel::Disagreement, ThreeLevel::Uncertainty, ThreeLevel::Agreement]);
    for (annotator, item, likert) in ratings {
        m.set(annotator, item, ThreeLevel::from_likert(likert))
            .expect("all three levels are declared");
    }
    let n_items = m.units().len();
    let n_annotators = m.raters().len();
    match krippendorff_alpha(&m) {
        Ok(alpha) => Ok(AlphaReport::Ok {
            alpha,
            n_items,
            n_annotators,
        }),
        Err(AlphaError::Degenerate { category }) => Ok(AlphaReport::Degenerate {
            category,
            n_items,
            n_annotators,
        }),
        Err(AlphaError::NoPairableUnits) => Err(AnnotateError::InsufficientOverlap),
        Err(e @ AlphaError::UnknownCategory(_)) => unreachable!("{e}"),
    }
}
