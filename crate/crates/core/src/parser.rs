//! Raw model responses and their conversion into structured judgments.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::cell::CellKey;
use crate::prompt::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

impl FinishReason {
    pub fn from_wire(s: Option<&str>) -> Self {
        match s {
            Some("stop") | Some("eos") => FinishReason::Stop,
            Some("length") => FinishReason::Length,
            _ => FinishReason::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

impl RawResponse {
    pub fn text(text: impl Into<String>) -> Self {
        RawResponse {
            text: text.into(),
            token_logprobs: None,
            finish_reason: FinishReason::Stop,
            latency_ms: 0,
        }
    }
}

/// Per-response label. `Missing` marks a response that could not be parsed
/// or a cell whose retry ladder was exhausted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Sarcastic,
    NonSarcastic,
    Neutral,
    Missing,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sarcastic => "sarcastic",
            Label::NonSarcastic => "non_sarcastic",
            Label::Neutral => "neutral",
            Label::Missing => "missing",
        }
    }

    /// Labels a task may legitimately produce, excluding `Missing`.
    pub fn allowed_for(task: TaskKind) -> &'static [Label] {
        match task {
            TaskKind::Tsc => &[Label::Sarcastic, Label::NonSarcastic, Label::Neutral],
            _ => &[Label::Sarcastic, Label::NonSarcastic],
        }
    }

    fn from_canonical(s: &str) -> Option<Label> {
        match s {
            "sarcastic" => Some(Label::Sarcastic),
            "non_sarcastic" => Some(Label::NonSarcastic),
            "neutral" => Some(Label::Neutral),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Repaired,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelJudgment {
    pub sample_id: String,
    pub model: String,
    pub task: TaskKind,
    pub variant_id: u32,
    pub label: Label,
    pub rationale: String,
    /// Self-reported confidence (BSC/TSC) or perspective score (SCS/LCS).
    pub score: Option<f64>,
    /// Sum of negative token log-probabilities.
    pub nll: Option<f64>,
    /// Per-token mean of the same.
    pub nll_mean: Option<f64>,
    pub parse_status: ParseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ModelJudgment {
    /// A judgment with no usable content.
    pub fn missing(key: &CellKey, reason: impl Into<String>) -> Self {
        ModelJudgment {
            sample_id: key.sample_id.clone(),
            model: key.model.clone(),
            task: key.task,
            variant_id: key.variant_id,
            label: Label::Missing,
            rationale: String::new(),
            score: None,
            nll: None,
            nll_mean: None,
            parse_status: ParseStatus::Failed,
            failure: Some(reason.into()),
        }
    }

    pub fn key(&self) -> CellKey {
        CellKey::new(self.model.clone(), self.task, self.variant_id, self.sample_id.clone())
    }

    pub fn is_missing(&self) -> bool {
        self.label == Label::Missing
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("score {0} is outside [0, 1]")]
pub struct ScoreOutOfRange(pub f64);

fn check_unit(score: f64) -> Result<f64, ScoreOutOfRange> {
    if (0.0..=1.0).contains(&score) {
        Ok(score)
    } else {
        Err(ScoreOutOfRange(score))
    }
}

/// Sarcasm-centric score to label: sarcastic iff the score exceeds 0.5.
pub fn derive_label_scs(score: f64) -> Result<Label, ScoreOutOfRange> {
    Ok(if check_unit(score)? > 0.5 {
        Label::Sarcastic
    } else {
        Label::NonSarcastic
    })
}

/// Literal-centric score to label: sarcastic iff the score is below 0.5.
pub fn derive_label_lcs(score: f64) -> Result<Label, ScoreOutOfRange> {
    Ok(if check_unit(score)? < 0.5 {
        Label::Sarcastic
    } else {
        Label::NonSarcastic
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nll {
    pub sum: f64,
    pub mean: f64,
    pub n_tokens: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum NllError {
    #[error("response carries no token log-probabilities")]
    Absent,
    #[error("response has an empty log-probability list")]
    Empty,
    #[error("token {index} has invalid log-probability {value}")]
    Invalid { index: usize, value: f64 },
}

/// Negative log-likelihood of the generated tokens.
pub fn nll_of(raw: &RawResponse) -> Result<Nll, NllError> {
    let lps = raw.token_logprobs.as_deref().ok_or(NllError::Absent)?;
    if lps.is_empty() {
        return Err(NllError::Empty);
    }
    let mut sum = 0.0;
    for (index, &lp) in lps.iter().enumerate() {
        if !lp.is_finite() || lp > 0.0 {
            return Err(NllError::Invalid { index, value: lp });
        }
        sum -= lp;
    }
    Ok(Nll {
        sum,
        mean: sum / lps.len() as f64,
        n_tokens: lps.len(),
    })
}

/// Pulls the body out of a Markdown code fence, if there is one.
fn strip_fence(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// Removes commas that directly precede `}` or `]`, outside string literals.
fn drop_trailing_commas(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut in_str = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_str {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        if c == '"' {
            in_str = true;
        } else if c == ',' {
            let next = chars[i + 1..].iter().find(|c| !c.is_whitespace());
            if matches!(next, Some('}') | Some(']')) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

fn repair(text: &str) -> Option<Map<String, Value>> {
    let body = strip_fence(text).unwrap_or(text);
    let start = body.find('{')?;
    let end = body.rfind('}')?;
    if end < start {
        return None;
    }
    match serde_json::from_str(&drop_trailing_commas(&body[start..=end])) {
        Ok(Value::Object(m)) => Some(m),
        _ => None,
    }
}

fn extract_object(text: &str) -> Option<(Map<String, Value>, bool)> {
    if let Ok(Value::Object(m)) = serde_json::from_str(text.trim()) {
        return Some((m, false));
    }
    repair(text).map(|m| (m, true))
}

struct Fields {
    label: Label,
    rationale: String,
    score: f64,
    repaired: bool,
}

fn unit_field(obj: &Map<String, Value>, name: &str) -> Result<f64, String> {
    let v = obj
        .get(name)
        .ok_or_else(|| format!("missing \"{name}\""))?
        .as_f64()
        .ok_or_else(|| format!("\"{name}\" is not a number"))?;
    check_unit(v).map_err(|e| format!("\"{name}\": {e}"))
}

fn read_fields(obj: &Map<String, Value>, task: TaskKind) -> Result<Fields, String> {
    let rationale = obj
        .get("rationale")
        .and_then(Value::as_str)
        .ok_or("missing or non-string \"rationale\"")?
        .to_string();
    if task.is_classification() {
        let raw = obj
            .get("label")
            .and_then(Value::as_str)
            .ok_or("missing or non-string \"label\"")?;
        let (label, repaired) = match Label::from_canonical(raw) {
            Some(l) => (l, false),
            None => {
                let folded = raw.trim().to_lowercase().replace(['-', ' '], "_");
                let l = Label::from_canonical(&folded).ok_or_else(|| format!("unknown label {raw:?}"))?;
                (l, true)
            }
        };
        if !Label::allowed_for(task).contains(&label) {
            return Err(format!("label {label} is not valid for {task}"));
        }
        let score = unit_field(obj, "confidence")?;
        Ok(Fields {
            label,
            rationale,
            score,
            repaired,
        })
    } else {
        let score = unit_field(obj, "score")?;
        let label = match task {
            TaskKind::Scs => derive_label_scs(score),
            _ => derive_label_lcs(score),
        }
        .map_err(|e| e.to_string())?;
        Ok(Fields {
            label,
            rationale,
            score,
            repaired: false,
        })
    }
}

/// Parses a raw response for the given cell. Never fails: unparseable
/// output yields a judgment with `parse_status = failed` and label `missing`.
pub fn parse(raw: &RawResponse, key: &CellKey) -> ModelJudgment {
    let nll = nll_of(raw).ok();
    let outcome = extract_object(&raw.text)
        .ok_or_else(|| "no JSON object found".to_string())
        .and_then(|(obj, repaired)| {
            read_fields(&obj, key.task).map(|mut f| {
                f.repaired |= repaired;
                f
            })
        });
    match outcome {
        Ok(f) => ModelJudgment {
            sample_id: key.sample_id.clone(),
            model: key.model.clone(),
            task: key.task,
            variant_id: key.variant_id,
            label: f.label,
            rationale: f.rationale,
            score: Some(f.score),
            nll: nll.map(|n| n.sum),
            nll_mean: nll.map(|n| n.mean),
            parse_status: if f.repaired {
                ParseStatus::Repaired
            } else {
                ParseStatus::Ok
            },
            failure: None,
        },
        Err(reason) => {
            let mut j = ModelJudgment::missing(key, reason);
            j.nll = nll.map(|n| n.sum);
            j.nll_mean = nll.map(|n| n.mean);
            j
        }
    }
}
