use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::parser::{Label, ModelJudgment};
use crate::prompt::TaskKind;

/// Which per-response NLL figure to summarize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NllStatistic {
    /// Total over generated tokens.
    Sum,
    /// Per-token mean.
    PerToken,
}

impl NllStatistic {
    pub fn as_str(self) -> &'static str {
        match self {
            NllStatistic::Sum => "sum",
            NllStatistic::PerToken => "per_token",
        }
    }

    fn pick(self, j: &ModelJudgment) -> Option<f64> {
        match self {
            NllStatistic::Sum => j.nll,
            NllStatistic::PerToken => j.nll_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllGroupStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between closest ranks on sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Order statistics of NLL per (task, predicted label). Judgments without
/// an NLL value are skipped; empty groups are omitted.
pub fn nll_summary(judgments: &[ModelJudgment], statistic: NllStatistic) -> BTreeMap<(TaskKind, Label), NllGroupStats> {
    let mut groups: BTreeMap<(TaskKind, Label), Vec<f64>> = BTreeMap::new();
    for j in judgments {
        if let Some(v) = statistic.pick(j) {
            groups.entry((j.task, j.label)).or_default().push(v);
        }
    }
    groups
        .into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let stats = NllGroupStats {
                n,
                mean: v.iter().sum::<f64>() / n as f64,
                median: quantile(&v, 0.5),
                q1: quantile(&v, 0.25),
                q3: quantile(&v, 0.75),
                min: v[0],
                max: v[n - 1],
            };
            (k, stats)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::ParseStatus;

    fn j(task: TaskKind, label: Label, nll: f64) -> ModelJudgment {
        ModelJudgment {
            sample_id: "s".into(),
            model: "m".into(),
            task,
            variant_id: 1,
            label,
            rationale: String::new(),
            score: None,
            nll: Some(nll),
            nll_mean: Some(nll / 2.0),
            parse_status: ParseStatus::Ok,
            failure: None,
        }
    }

    #[test]
    fn single_value_group() {
        let s = nll_summary(&[j(TaskKind::Bsc, Label::Sarcastic, 0.3)], NllStatistic::Sum);
        let g = s[&(TaskKind::Bsc, Label::Sarcastic)];
        assert_eq!(g.n, 1);
        assert_eq!(g.mean, 0.3);
        assert_eq!(g.median, 0.3);
    }

    #[test]
    fn median_and_quartiles_of_four() {
        let js: Vec<_> = [4.0, 1.0, 3.0, 2.0]
            .iter()
            .map(|&x| j(TaskKind::Tsc, Label::Neutral, x))
            .collect();
        let g = nll_summary(&js, NllStatistic::Sum)[&(TaskKind::Tsc, Label::Neutral)];
        assert_eq!(g.median, 2.5);
        assert_eq!(g.q1, 1.75);
        assert_eq!(g.q3, 3.25);
        assert_eq!((g.min, g.max), (1.0, 4.0));
        let per_token = nll_summary(&js, NllStatistic::PerToken)[&(TaskKind::Tsc, Label::Neutral)];
        assert_eq!(per_token.median, 1.25);
    }

    #[test]
    fn groups_split_by_task_and_label() {
        let mut js = vec![
            j(TaskKind::Bsc, Label::Sarcastic, 1.0),
            j(TaskKind::Bsc, Label::NonSarcastic, 2.0),
        ];
        let mut no_nll = j(TaskKind::Scs, Label::Sarcastic, 0.0);
        no_nll.nll = None;
        js.push(no_nll);
        let s = nll_summary(&js, NllStatistic::Sum);
        assert_eq!(s.len(), 2);
        assert!(!s.contains_key(&(TaskKind::Scs, Label::Sarcastic)));
    }
}
