//! Image-text sarcasm corpora in the normalized line-record manifest format.
//!
//! A manifest is UTF-8 JSON Lines, one sample per line:
//!
//! ```text
//! {"id":"s1","text":"what a lovely day","image":"img/s1.jpg","label":"sarcastic","source":"mmsd2"}
//! ```
//!
//! Image paths resolve relative to the manifest's directory. Images are only
//! checked for readability; their bytes are never decoded.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DATA_URI_PREFIX: &str = "data:application/octet-stream;base64,";

/// Binary ground-truth label. Source datasets carry no neutral gold label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Sarcastic,
    NonSarcastic,
}

impl GoldLabel {
    pub const ALL: [GoldLabel; 2] = [GoldLabel::Sarcastic, GoldLabel::NonSarcastic];

    pub fn as_str(self) -> &'static str {
        match self {
            GoldLabel::Sarcastic => "sarcastic",
            GoldLabel::NonSarcastic => "non_sarcastic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sarcastic" => Some(GoldLabel::Sarcastic),
            "non_sarcastic" => Some(GoldLabel::NonSarcastic),
            _ => None,
        }
    }
}

impl fmt::Display for GoldLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// MIME type guessed from the leading bytes of an image.
pub fn sniff_mime(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        [b'B', b'M', ..] => "image/bmp",
        _ => "application/octet-stream",
    }
}

/// Where a sample's image bytes come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageRef {
    Path(PathBuf),
    Inline(Vec<u8>),
}

impl ImageRef {
    pub fn read_bytes(&self) -> std::io::Result<Vec<u8>> {
        match self {
            ImageRef::Path(p) => fs::read(p),
            ImageRef::Inline(b) => Ok(b.clone()),
        }
    }

    /// Stable textual reference used in digests, exports and case bundles.
    pub fn display_ref(&self) -> String {
        match self {
            ImageRef::Path(p) => p.display().to_string(),
            ImageRef::Inline(b) => {
                let digest = Sha256::digest(b);
                format!("inline:sha256:{}", hex::encode(digest))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub image: ImageRef,
    pub gold_label: GoldLabel,
    pub source: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub sarcastic: usize,
    pub non_sarcastic: usize,
}

impl LabelCounts {
    pub fn get(&self, label: GoldLabel) -> usize {
        match label {
            GoldLabel::Sarcastic => self.sarcastic,
            GoldLabel::NonSarcastic => self.non_sarcastic,
        }
    }

    pub fn total(&self) -> usize {
        self.sarcastic + self.non_sarcastic
    }
}

/// An ordered, id-unique collection of samples. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<Sample>,
    counts: LabelCounts,
    content_hash: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("manifest line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("source {source_tag:?} has {available} {label} samples, {required} required")]
    InsufficientSamples {
        source_tag: String,
        label: GoldLabel,
        available: usize,
        required: usize,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    text: String,
    image: String,
    label: String,
    source: String,
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        let mut counts = LabelCounts::default();
        let mut hasher = Sha256::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
            match s.gold_label {
                GoldLabel::Sarcastic => counts.sarcastic += 1,
                GoldLabel::NonSarcastic => counts.non_sarcastic += 1,
            }
            // Length-prefix the id so distinct id sequences never collide.
            hasher.update((s.id.len() as u64).to_le_bytes());
            hasher.update(s.id.as_bytes());
            hasher.update([s.gold_label as u8]);
        }
        Ok(Corpus {
            samples,
            counts,
            content_hash: hex::encode(hasher.finalize()),
        })
    }

    pub fn empty() -> Self {
        Corpus::new(Vec::new()).expect("empty corpus is valid")
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn counts(&self) -> LabelCounts {
        self.counts
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn gold_labels(&self) -> BTreeMap<String, GoldLabel> {
        self.samples.iter().map(|s| (s.id.clone(), s.gold_label)).collect()
    }

    /// Writes the corpus as a manifest. Image paths under the manifest's
    /// directory are written relative to it; inline images become data URIs.
    pub fn export_manifest(&self, path: &Path) -> Result<(), CorpusError> {
        let io_err = |source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        };
        let base = path.parent().unwrap_or(Path::new(""));
        let base = base.canonicalize().unwrap_or_else(|_| base.to_path_buf());
        let mut out = String::new();
        for s in &self.samples {
            let image = match &s.image {
                ImageRef::Path(p) => {
                    let abs = p.canonicalize().unwrap_or_else(|_| p.clone());
                    abs.strip_prefix(&base)
                        .map(Path::to_path_buf)
                        .unwrap_or(abs)
                        .to_string_lossy()
                        .into_owned()
                }
                ImageRef::Inline(bytes) => format!(
                    "{DATA_URI_PREFIX}{}",
                    base64::engine::general_purpose::STANDARD.encode(bytes)
                ),
            };
            let rec = ManifestRecord {
                id: s.id.clone(),
                text: s.text.clone(),
                image,
                label: s.gold_label.as_str().to_string(),
                source: s.source.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("manifest record serializes"));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(out.as_bytes()).map_err(io_err)?;
        f.sync_all().map_err(io_err)
    }
}

/// Loads a manifest, preserving file order. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Corpus, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut samples = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let gold_label = GoldLabel::parse(&rec.label).ok_or_else(|| CorpusError::UnknownLabel {
            line: line_no,
            label: rec.label.clone(),
        })?;
        let image = match rec.image.strip_prefix(DATA_URI_PREFIX) {
            Some(b64) => ImageRef::Inline(base64::engine::general_purpose::STANDARD.decode(b64).map_err(|e| {
                CorpusError::Malformed {
                    line: line_no,
                    message: format!("inline image: {e}"),
                }
            })?),
            None => ImageRef::Path(base.join(&rec.image)),
        };
        samples.push(Sample {
            id: rec.id,
            text: rec.text,
            image,
            gold_label,
            source: rec.source,
        });
    }
    Corpus::new(samples)
}

/// Draws `per_class_per_corpus` samples of each label from every corpus.
///
/// Each (corpus, label) pool is shuffled with a ChaCha stream seeded from
/// `seed` and the prefix is taken. Output is grouped by corpus, sarcastic
/// first, in shuffled order within each group.
pub fn sample_balanced(corpora: &[Corpus], per_class_per_corpus: usize, seed: u64) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(2 * per_class_per_corpus * corpora.len());
    for corpus in corpora {
        for label in GoldLabel::ALL {
            let mut pool: Vec<&Sample> = corpus.samples.iter().filter(|s| s.gold_label == label).collect();
            if pool.len() < per_class_per_corpus {
                let source_tag = corpus.samples.first().map(|s| s.source.clone()).unwrap_or_default();
                return Err(CorpusError::InsufficientSamples {
                    source_tag,
                    label,
                    available: pool.len(),
                    required: per_class_per_corpus,
                });
            }
            pool.shuffle(&mut rng);
            picked.extend(pool.into_iter().take(per_class_per_corpus).cloned());
        }
    }
    Corpus::new(picked)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    EmptyText,
    UnreadableImage(String),
    EmptyImage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub sample_id: String,
    pub kind: IssueKind,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::EmptyText => write!(f, "{}: empty text", self.sample_id),
            IssueKind::UnreadableImage(e) => write!(f, "{}: unreadable image: {e}", self.sample_id),
            IssueKind::EmptyImage => write!(f, "{}: image has zero bytes", self.sample_id),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Checks every sample invariant that can drift after loading.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut issues = Vec::new();
    for s in &corpus.samples {
        if s.text.trim().is_empty() {
            issues.push(ValidationIssue {
                sample_id: s.id.clone(),
                kind: IssueKind::EmptyText,
            });
        }
        match s.image.read_bytes() {
            Ok(bytes) if bytes.is_empty() => issues.push(ValidationIssue {
                sample_id: s.id.clone(),
                kind: IssueKind::EmptyImage,
            }),
            Ok(_) => {}
            Err(e) => issues.push(ValidationIssue {
                sample_id: s.id.clone(),
                kind: IssueKind::UnreadableImage(e.to_string()),
            }),
        }
    }
    ValidationReport { issues }
}
