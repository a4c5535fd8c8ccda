//! Task definitions, prompt template library and rendering.
//!
//! A library directory holds one file per (task, variant) named
//! `<task>_<variant_id>.prompt` (for example `bsc_1.prompt`). Each file has
//! three sections separated by lines consisting solely of `---`: the task
//! description, the analysis steps and the output format. Sections may use
//! the placeholders `{{TEXT}}`, `{{IMAGE}}` and `{{WORD_LIMIT}}`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImageRef, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    /// Binary sarcasm classification.
    #[serde(rename = "BSC")]
    Bsc,
    /// Ternary classification with a neutral option.
    #[serde(rename = "TSC")]
    Tsc,
    /// Sarcasm-centric scoring.
    #[serde(rename = "SCS")]
    Scs,
    /// Literal-centric scoring.
    #[serde(rename = "LCS")]
    Lcs,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Bsc, TaskKind::Tsc, TaskKind::Scs, TaskKind::Lcs];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Bsc => "BSC",
            TaskKind::Tsc => "TSC",
            TaskKind::Scs => "SCS",
            TaskKind::Lcs => "LCS",
        }
    }

    /// Classification tasks report a label and a confidence; scoring tasks
    /// report a score from which the label is derived.
    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::Bsc | TaskKind::Tsc)
    }

    /// Output field carrying the task's numeric value.
    pub fn score_field(self) -> &'static str {
        if self.is_classification() {
            "confidence"
        } else {
            "score"
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown task {0:?} (expected BSC, TSC, SCS or LCS)")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "BSC" => Ok(TaskKind::Bsc),
            "TSC" => Ok(TaskKind::Tsc),
            "SCS" => Ok(TaskKind::Scs),
            "LCS" => Ok(TaskKind::Lcs),
            _ => Err(UnknownTask(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placeholder {
    Text,
    Image,
    WordLimit,
}

impl Placeholder {
    fn token(self) -> &'static str {
        match self {
            Placeholder::Text => "{{TEXT}}",
            Placeholder::Image => "{{IMAGE}}",
            Placeholder::WordLimit => "{{WORD_LIMIT}}",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

/// Splits template text into literals and placeholders in one pass, so
/// substituted content is never rescanned for tokens.
fn tokenize(text: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let Some(len) = rest[start..].find("}}") else {
            return Err("unterminated `{{`".into());
        };
        let name = &rest[start + 2..start + len];
        let slot = match name {
            "TEXT" => Placeholder::Text,
            "IMAGE" => Placeholder::Image,
            "WORD_LIMIT" => Placeholder::WordLimit,
            other => return Err(format!("unknown placeholder {{{{{other}}}}}")),
        };
        if start > 0 {
            out.push(Segment::Literal(rest[..start].to_string()));
        }
        out.push(Segment::Slot(slot));
        rest = &rest[start + len + 2..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub task: TaskKind,
    pub variant_id: u32,
    pub description: String,
    pub analysis_steps: String,
    pub output_format: String,
    segments: Vec<Segment>,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt library {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("prompt library has no template for task {0}")]
    MissingTask(TaskKind),
    #[error("task {task} variant {variant_id} defined twice ({file})")]
    DuplicateVariant {
        task: TaskKind,
        variant_id: u32,
        file: PathBuf,
    },
    #[error("task {task} variants must be numbered 1..={count} without gaps")]
    NonContiguousVariants { task: TaskKind, count: usize },
    #[error("invalid template {file}: {reason}")]
    InvalidTemplate { file: PathBuf, reason: String },
}

impl PromptTemplate {
    /// Builds a template from its three sections, checking placeholders and
    /// the declared output schema.
    pub fn new(
        task: TaskKind,
        variant_id: u32,
        description: impl Into<String>,
        analysis_steps: impl Into<String>,
        output_format: impl Into<String>,
    ) -> Result<Self, String> {
        let description = description.into();
        let analysis_steps = analysis_steps.into();
        let output_format = output_format.into();
        if variant_id == 0 {
            return Err("variant ids start at 1".into());
        }
        let body = join_sections(&description, &analysis_steps, &output_format);
        let segments = tokenize(&body)?;
        let count = |p: Placeholder| segments.iter().filter(|s| **s == Segment::Slot(p)).count();
        for p in [Placeholder::Text, Placeholder::Image] {
            if count(p) == 0 {
                return Err(format!("missing {} placeholder", p.token()));
            }
        }
        if count(Placeholder::WordLimit) != 1 {
            return Err(format!(
                "{} must occur exactly once, found {}",
                Placeholder::WordLimit.token(),
                count(Placeholder::WordLimit)
            ));
        }
        let required: &[&str] = if task.is_classification() {
            &["label", "rationale", "confidence"]
        } else {
            &["rationale", "score"]
        };
        for field in required {
            if !output_format.contains(&format!("\"{field}\"")) {
                return Err(format!("output format for {task} must declare the \"{field}\" field"));
            }
        }
        Ok(PromptTemplate {
            task,
            variant_id,
            description,
            analysis_steps,
            output_format,
            segments,
        })
    }

    /// Parses a `.prompt` file body.
    pub fn parse(task: TaskKind, variant_id: u32, source: &str) -> Result<Self, String> {
        let mut sections: Vec<String> = vec![String::new()];
        for line in source.lines() {
            if line.trim_end() == "---" {
                sections.push(String::new());
            } else {
                let cur = sections.last_mut().expect("non-empty");
                cur.push_str(line);
                cur.push('\n');
            }
        }
        if sections.len() != 3 {
            return Err(format!("expected 3 `---`-delimited sections, found {}", sections.len()));
        }
        let mut it = sections.into_iter().map(|s| s.trim().to_string());
        let (d, a, o) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        Self::new(task, variant_id, d, a, o)
    }

    /// Full template text, used for configuration digests.
    pub fn body(&self) -> String {
        join_sections(&self.description, &self.analysis_steps, &self.output_format)
    }
}

fn join_sections(d: &str, a: &str, o: &str) -> String {
    format!("{d}\n\n{a}\n\n{o}")
}

/// Templates per task, each list ordered by variant id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PromptLibrary {
    templates: BTreeMap<TaskKind, Vec<PromptTemplate>>,
}

impl PromptLibrary {
    pub fn from_templates(templates: Vec<PromptTemplate>) -> Result<Self, PromptError> {
        let mut by_task: BTreeMap<TaskKind, Vec<PromptTemplate>> = BTreeMap::new();
        for t in templates {
            by_task.entry(t.task).or_default().push(t);
        }
        for task in TaskKind::ALL {
            let list = by_task.get_mut(&task).ok_or(PromptError::MissingTask(task))?;
            list.sort_by_key(|t| t.variant_id);
            for w in list.windows(2) {
                if w[0].variant_id == w[1].variant_id {
                    return Err(PromptError::DuplicateVariant {
                        task,
                        variant_id: w[0].variant_id,
                        file: PathBuf::new(),
                    });
                }
            }
            if list.iter().enumerate().any(|(i, t)| t.variant_id as usize != i + 1) {
                return Err(PromptError::NonContiguousVariants {
                    task,
                    count: list.len(),
                });
            }
        }
        Ok(PromptLibrary { templates: by_task })
    }

    pub fn variants(&self, task: TaskKind) -> &[PromptTemplate] {
        self.templates.get(&task).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn get(&self, task: TaskKind, variant_id: u32) -> Option<&PromptTemplate> {
        self.variants(task).iter().find(|t| t.variant_id == variant_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskKind> + '_ {
        self.templates.keys().copied()
    }

    pub fn variant_ids(&self, task: TaskKind) -> Vec<u32> {
        self.variants(task).iter().map(|t| t.variant_id).collect()
    }
}

fn parse_file_name(name: &str) -> Option<(TaskKind, u32)> {
    let stem = name.strip_suffix(".prompt")?;
    let (task, variant) = stem.rsplit_once('_')?;
    Some((task.parse().ok()?, variant.parse().ok()?))
}

/// Loads every `*.prompt` file in `dir`. Other files are ignored.
pub fn load_prompt_library(dir: &Path) -> Result<PromptLibrary, PromptError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PromptError::Io { path, source }
    };
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();

    let mut seen: BTreeMap<(TaskKind, u32), PathBuf> = BTreeMap::new();
    let mut templates = Vec::new();
    for path in entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !name.ends_with(".prompt") {
            continue;
        }
        let (task, variant_id) = parse_file_name(name).ok_or_else(|| PromptError::InvalidTemplate {
            file: path.clone(),
            reason: "file name must be <task>_<variant_id>.prompt".into(),
        })?;
        if seen.contains_key(&(task, variant_id)) {
            return Err(PromptError::DuplicateVariant {
                task,
                variant_id,
                file: path,
            });
        }
        let source = fs::read_to_string(&path).map_err(io_err(&path))?;
        let template =
            PromptTemplate::parse(task, variant_id, &source).map_err(|reason| PromptError::InvalidTemplate {
                file: path.clone(),
                reason,
            })?;
        seen.insert((task, variant_id), path);
        templates.push(template);
    }
    PromptLibrary::from_templates(templates)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessagePart {
    Text(String),
    Image(ImageRef),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub task: TaskKind,
    pub variant_id: u32,
    pub parts: Vec<MessagePart>,
    pub word_limit: u32,
}

impl RenderedPrompt {
    pub fn image(&self) -> Option<&ImageRef> {
        self.parts.iter().find_map(|p| match p {
            MessagePart::Image(i) => Some(i),
            MessagePart::Text(_) => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, MessagePart::Image(_))).count()
    }

    /// All text parts concatenated, in order.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                MessagePart::Text(t) => Some(t.as_str()),
                MessagePart::Image(_) => None,
            })
            .collect()
    }
}

/// Substitutes the sample and word limit into a template.
///
/// The image is attached once, at the first `{{IMAGE}}`; any later
/// occurrence is rendered as the words "the image".
pub fn render(template: &PromptTemplate, sample: &Sample, word_limit: u32) -> RenderedPrompt {
    let mut parts = Vec::new();
    let mut buf = String::new();
    let mut attached = false;
    for seg in &template.segments {
        match seg {
            Segment::Literal(s) => buf.push_str(s),
            Segment::Slot(Placeholder::Text) => buf.push_str(&sample.text),
            Segment::Slot(Placeholder::WordLimit) => buf.push_str(&word_limit.to_string()),
            Segment::Slot(Placeholder::Image) if !attached => {
                if !buf.is_empty() {
                    parts.push(MessagePart::Text(std::mem::take(&mut buf)));
                }
                parts.push(MessagePart::Image(sample.image.clone()));
                attached = true;
            }
            Segment::Slot(Placeholder::Image) => buf.push_str("the image"),
        }
    }
    if !buf.is_empty() {
        parts.push(MessagePart::Text(buf));
    }
    RenderedPrompt {
        task: template.task,
        variant_id: template.variant_id,
        parts,
        word_limit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::GoldLabel;
    use proptest::prelude::*;

    fn reference_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../prompts")
    }

    fn sample(text: &str) -> Sample {
        Sample {
            id: "s".into(),
            text: text.into(),
            image: ImageRef::Inline(vec![1, 2, 3]),
            gold_label: GoldLabel::Sarcastic,
            source: "t".into(),
        }
    }

    fn template_source(task: TaskKind, n: u32) -> String {
        let out = if task.is_classification() {
            r#"{"label": "...", "rationale": "...", "confidence": 0.0}"#
        } else {
            r#"{"rationale": "...", "score": 0.0}"#
        };
        format!(
            "Variant {n}. Text: {{{{TEXT}}}} Image: {{{{IMAGE}}}}\n---\nThink, limit to {{{{WORD_LIMIT}}}} words.\n---\n{out}\n"
        )
    }

    fn write_library(dir: &Path, n: u32) {
        for task in TaskKind::ALL {
            for v in 1..=n {
                let name = format!("{}_{v}.prompt", task.as_str().to_lowercase());
                fs::write(dir.join(name), template_source(task, v)).unwrap();
            }
        }
    }

    #[test]
    fn reference_library_has_three_variants_per_task() {
        let lib = load_prompt_library(&reference_dir()).unwrap();
        for task in TaskKind::ALL {
            assert_eq!(lib.variant_ids(task), vec![1, 2, 3], "{task}");
        }
    }

    #[test]
    fn ten_variant_library_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        write_library(dir.path(), 10);
        let lib = load_prompt_library(dir.path()).unwrap();
        for task in TaskKind::ALL {
            assert_eq!(lib.variants(task).len(), 10);
        }
    }

    #[test]
    fn missing_word_limit_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_library(dir.path(), 1);
        fs::write(
            dir.path().join("tsc_1.prompt"),
            "Text {{TEXT}} {{IMAGE}}\n---\nsteps\n---\n\"label\" \"rationale\" \"confidence\"",
        )
        .unwrap();
        match load_prompt_library(dir.path()) {
            Err(PromptError::InvalidTemplate { file, reason }) => {
                assert!(file.ends_with("tsc_1.prompt"));
                assert!(reason.contains("WORD_LIMIT"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn library_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_library(dir.path(), 2);
        fs::remove_file(dir.path().join("lcs_1.prompt")).unwrap();
        fs::remove_file(dir.path().join("lcs_2.prompt")).unwrap();
        assert!(matches!(
            load_prompt_library(dir.path()),
            Err(PromptError::MissingTask(TaskKind::Lcs))
        ));

        write_library(dir.path(), 2);
        fs::write(dir.path().join("bsc_01.prompt"), template_source(TaskKind::Bsc, 1)).unwrap();
        assert!(matches!(
            load_prompt_library(dir.path()),
            Err(PromptError::DuplicateVariant {
                task: TaskKind::Bsc,
                variant_id: 1,
                ..
            })
        ));

        fs::remove_file(dir.path().join("bsc_01.prompt")).unwrap();
        fs::write(dir.path().join("scs_5.prompt"), template_source(TaskKind::Scs, 5)).unwrap();
        assert!(matches!(
            load_prompt_library(dir.path()),
            Err(PromptError::NonContiguousVariants {
                task: TaskKind::Scs,
                ..
            })
        ));
    }

    #[test]
    fn template_invariants() {
        let fmt_ok = r#""label" "rationale" "confidence""#;
        assert!(PromptTemplate::new(TaskKind::Bsc, 1, "{{TEXT}} {{IMAGE}}", "{{WORD_LIMIT}}", fmt_ok).is_ok());
        let twice = PromptTemplate::new(
            TaskKind::Bsc,
            1,
            "{{TEXT}} {{IMAGE}} {{WORD_LIMIT}}",
            "{{WORD_LIMIT}}",
            fmt_ok,
        );
        assert!(twice.unwrap_err().contains("exactly once"));
        let no_image = PromptTemplate::new(TaskKind::Bsc, 1, "{{TEXT}}", "{{WORD_LIMIT}}", fmt_ok);
        assert!(no_image.unwrap_err().contains("IMAGE"));
        let unknown = PromptTemplate::new(TaskKind::Bsc, 1, "{{TEXT}} {{IMAGE}} {{FOO}}", "{{WORD_LIMIT}}", fmt_ok);
        assert!(unknown.unwrap_err().contains("FOO"));
        let no_score = PromptTemplate::new(
            TaskKind::Scs,
            1,
            "{{TEXT}} {{IMAGE}}",
            "{{WORD_LIMIT}}",
            r#""rationale""#,
        );
        assert!(no_score.unwrap_err().contains("score"));
    }

    #[test]
    fn render_substitutes_all_placeholders() {
        let lib = load_prompt_library(&reference_dir()).unwrap();
        let t = lib.get(TaskKind::Bsc, 1).unwrap();
        let s = sample("Great, another Monday.");
        let r = render(t, &s, 150);
        assert_eq!(r.image_count(), 1);
        assert_eq!(r.image(), Some(&s.image));
        let text = r.text();
        assert!(text.contains("150"));
        assert!(text.contains("Great, another Monday."));
        assert!(!text.contains("{{"));
        assert!(text.contains("\"confidence\""));

        let zero = render(t, &s, 0);
        assert!(zero.text().contains("limit to 0 words") || zero.text().contains(" 0 "));
    }

    #[test]
    fn scoring_prompts_declare_score_field() {
        let lib = load_prompt_library(&reference_dir()).unwrap();
        let s = sample("x");
        for task in TaskKind::ALL {
            for t in lib.variants(task) {
                let text = render(t, &s, 150).text();
                assert!(
                    text.contains(&format!("\"{}\"", task.score_field())),
                    "{task} {}",
                    t.variant_id
                );
            }
        }
    }

    #[test]
    fn caption_containing_placeholder_is_not_rescanned() {
        let t = PromptTemplate::new(
            TaskKind::Bsc,
            1,
            "{{TEXT}}|{{IMAGE}}",
            "{{WORD_LIMIT}}",
            r#""label" "rationale" "confidence""#,
        )
        .unwrap();
        let r = render(&t, &sample("{{IMAGE}} {{WORD_LIMIT}}"), 5);
        assert_eq!(r.image_count(), 1);
        assert!(r.text().starts_with("{{IMAGE}} {{WORD_LIMIT}}|"));
    }

    proptest! {
        #[test]
        fn render_is_pure(text in "\\PC{0,40}", limit in 0u32..400) {
            let lib = load_prompt_library(&reference_dir()).unwrap();
            let s = sample(&text);
            for task in TaskKind::ALL {
                let t = &lib.variants(task)[0];
                let a = render(t, &s, limit);
                let b = render(t, &s, limit);
                prop_assert_eq!(&a, &b);
                prop_assert_eq!(a.image_count(), 1);
            }
        }
    }
}
