use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::AggregateValue;
use crate::corpus::GoldLabel;

/// Confusion counts with sarcastic as the positive class. Neutral and
/// undefined predictions are tallied separately and never enter the cells.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionStats {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_excluded_neutral: usize,
    pub n_excluded_undefined: usize,
    /// `None` when no prediction was definitive.
    pub correctness: Option<f64>,
}

impl ConfusionStats {
    pub fn definitive(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// TP, FP, TN, FN as fractions of the definitive predictions.
    pub fn proportions(&self) -> Option<[f64; 4]> {
        let d = self.definitive();
        (d > 0).then(|| {
            let d = d as f64;
            [
                self.tp as f64 / d,
                self.fp as f64 / d,
                self.tn as f64 / d,
                self.fn_ as f64 / d,
            ]
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("prediction for {0:?} has no gold label")]
pub struct UnknownSample(pub String);

pub fn confusion_stats(
    predicted: &BTreeMap<String, AggregateValue>,
    gold: &BTreeMap<String, GoldLabel>,
) -> Result<ConfusionStats, UnknownSample> {
    let mut s = ConfusionStats::default();
    for (id, value) in predicted {
        let g = gold.get(id).ok_or_else(|| UnknownSample(id.clone()))?;
        match (value, g) {
            (AggregateValue::Neutral, _) => s.n_excluded_neutral += 1,
            (AggregateValue::Undefined, _) => s.n_excluded_undefined += 1,
            (AggregateValue::Sarcastic, GoldLabel::Sarcastic) => s.tp += 1,
            (AggregateValue::Sarcastic, GoldLabel::NonSarcastic) => s.fp += 1,
            (AggregateValue::NonSarcastic, GoldLabel::NonSarcastic) => s.tn += 1,
            (AggregateValue::NonSarcastic, GoldLabel::Sarcastic) => s.fn_ += 1,
        }
    }
    let d = s.definitive();
    s.correctness = (d > 0).then(|| (s.tp + s.tn) as f64 / d as f64);
    Ok(s)
}
