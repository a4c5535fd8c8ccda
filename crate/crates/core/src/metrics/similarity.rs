//! Rationale consistency via greedy token matching.
//!
//! Each rationale is turned into a list of token vectors by a pluggable
//! [`TokenEncoder`]. Two rationales are compared by matching every token to
//! its most similar counterpart (cosine, floored at 0) and taking the F1 of
//! the resulting precision and recall. No baseline rescaling is applied.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::parser::ModelJudgment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("token list is empty")]
    EmptyTokens,
    #[error("token vector has zero norm")]
    ZeroNorm,
    #[error("token vectors have mismatched dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("encoder failed: {0}")]
    Encoder(String),
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Greedy-matching F1 between two token-vector sequences.
pub fn greedy_match_f1(tokens_a: &[Vec<f64>], tokens_b: &[Vec<f64>]) -> Result<f64, SimilarityError> {
    if tokens_a.is_empty() || tokens_b.is_empty() {
        return Err(SimilarityError::EmptyTokens);
    }
    let dim = tokens_a[0].len();
    let normalize = |v: &Vec<f64>| -> Result<Vec<f64>, SimilarityError> {
        if v.len() != dim {
            return Err(SimilarityError::DimensionMismatch(dim, v.len()));
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(SimilarityError::ZeroNorm);
        }
        Ok(v.iter().map(|x| x / n).collect())
    };
    let a: Vec<Vec<f64>> = tokens_a.iter().map(normalize).collect::<Result<_, _>>()?;
    let b: Vec<Vec<f64>> = tokens_b.iter().map(normalize).collect::<Result<_, _>>()?;

    let sim: Vec<Vec<f64>> = a
        .iter()
        .map(|x| {
            b.iter()
                .map(|y| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>().clamp(0.0, 1.0))
                .collect()
        })
        .collect();
    let recall = sim
        .iter()
        .map(|row| row.iter().copied().fold(0.0, f64::max))
        .sum::<f64>()
        / a.len() as f64;
    let precision = (0..b.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(0.0, f64::max))
        .sum::<f64>()
        / b.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Turns texts into per-token vectors of a fixed dimension.
pub trait TokenEncoder {
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<Vec<f64>>>, SimilarityError>;
}

/// Symmetric text similarity in [0, 1].
pub trait TextSimilarity {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, SimilarityError>;
}

impl<F> TextSimilarity for F
where
    F: Fn(&str, &str) -> f64,
{
    fn similarity(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        Ok(self(a, b))
    }
}

/// Greedy-matching F1 over the vectors produced by an encoder.
#[derive(Debug, Clone)]
pub struct EncoderSimilarity<E>(pub E);

impl<E: TokenEncoder> TextSimilarity for EncoderSimilarity<E> {
    fn similarity(&self, a: &str, b: &str) -> Result<f64, SimilarityError> {
        let mut enc = self.0.encode(&[a, b])?.into_iter();
        let (ea, eb) = match (enc.next(), enc.next()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(SimilarityError::Encoder("encoder returned too few texts".into())),
        };
        greedy_match_f1(&ea, &eb)
    }
}

/// Local encoder with no model weights: each lowercased word is hashed,
/// together with its character trigrams, into a fixed-size vector. Words
/// sharing spelling share direction, so the score tracks lexical overlap.
#[derive(Debug, Clone, Copy)]
pub struct HashingEncoder {
    pub dim: usize,
}

impl Default for HashingEncoder {
    fn default() -> Self {
        HashingEncoder { dim: 256 }
    }
}

impl HashingEncoder {
    fn bucket(&self, feature: &str) -> (usize, f64) {
        // FNV-1a, so vectors are stable across toolchains.
        let v = feature.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
        });
        let sign = if v & 1 == 0 { 1.0 } else { -1.0 };
        ((v >> 1) as usize % self.dim, sign)
    }

    fn word_vector(&self, word: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let (i, s) = self.bucket(word);
        v[i] += 2.0 * s;
        let padded: Vec<char> = format!("<{word}>").chars().collect();
        for tri in padded.windows(3) {
            let (i, s) = self.bucket(&tri.iter().collect::<String>());
            v[i] += s;
        }
        v
    }
}

impl TokenEncoder for HashingEncoder {
    fn encode(&self, texts: &[&str]) -> Result<Vec<Vec<Vec<f64>>>, SimilarityError> {
        texts
            .iter()
            .map(|t| {
                let tokens: Vec<Vec<f64>> = t
                    .split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(|w| self.word_vector(&w.to_lowercase()))
                    .filter(|v| norm(v) > 0.0)
                    .collect();
                if tokens.is_empty() {
                    Err(SimilarityError::EmptyTokens)
                } else {
                    Ok(tokens)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RationaleConsistency {
    pub mean: Option<f64>,
    /// Population standard deviation over retained pairs.
    pub stdev: Option<f64>,
    pub n_pairs: usize,
}

/// Mean similarity over all same-label variant pairs of each sample.
///
/// `groups` holds one slice per sample, all for a single (model, task).
/// Pairs whose labels differ, or where either side is missing, are
/// discarded. Pairs whose similarity cannot be computed (for instance an
/// empty rationale) are skipped as well.
pub fn rationale_consistency<'a, G, S>(groups: G, similarity: &S) -> Result<RationaleConsistency, SimilarityError>
where
    G: IntoIterator<Item = &'a [ModelJudgment]>,
    S: TextSimilarity + ?Sized,
{
    let mut scores = Vec::new();
    for group in groups {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                if a.is_missing() || b.is_missing() || a.label != b.label {
                    continue;
                }
                match similarity.similarity(&a.rationale, &b.rationale) {
                    Ok(s) => scores.push(s),
                    Err(SimilarityError::EmptyTokens) => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    if scores.is_empty() {
        return Ok(RationaleConsistency {
            mean: None,
            stdev: None,
            n_pairs: 0,
        });
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok(RationaleConsistency {
        mean: Some(mean),
        stdev: Some(var.sqrt()),
        n_pairs: scores.len(),
    })
}

/// Groups judgments by sample id, for feeding [`rationale_consistency`].
pub fn group_by_sample(judgments: &[ModelJudgment]) -> BTreeMap<String, Vec<ModelJudgment>> {
    let mut out: BTreeMap<String, Vec<ModelJudgment>> = BTreeMap::new();
    for j in judgments {
        out.entry(j.sample_id.clone()).or_default().push(j.clone());
    }
    for v in out.values_mut() {
        v.sort_by_key(|j| j.variant_id);
    }
    out
}
