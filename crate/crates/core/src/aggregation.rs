//! Collapsing per-variant judgments into per-sample decisions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::parser::{Label, ModelJudgment, ScoreOutOfRange};
use crate::prompt::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateValue {
    Sarcastic,
    NonSarcastic,
    Neutral,
    Undefined,
}

impl AggregateValue {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregateValue::Sarcastic => "sarcastic",
            AggregateValue::NonSarcastic => "non_sarcastic",
            AggregateValue::Neutral => "neutral",
            AggregateValue::Undefined => "undefined",
        }
    }

    fn from_label(l: Label) -> Option<Self> {
        match l {
            Label::Sarcastic => Some(AggregateValue::Sarcastic),
            Label::NonSarcastic => Some(AggregateValue::NonSarcastic),
            Label::Neutral => Some(AggregateValue::Neutral),
            Label::Missing => None,
        }
    }

    fn as_label(self) -> Option<Label> {
        match self {
            AggregateValue::Sarcastic => Some(Label::Sarcastic),
            AggregateValue::NonSarcastic => Some(Label::NonSarcastic),
            AggregateValue::Neutral => Some(Label::Neutral),
            AggregateValue::Undefined => None,
        }
    }
}

impl fmt::Display for AggregateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateLabel {
    pub value: AggregateValue,
    /// Votes per label; never contains `Missing`.
    pub vote_counts: BTreeMap<Label, usize>,
    pub n_missing: usize,
}

impl AggregateLabel {
    pub fn votes_cast(&self) -> usize {
        self.vote_counts.values().sum()
    }
}

/// Unique argmax over non-missing votes; `Undefined` on a tie for first
/// place or when no vote was cast.
pub fn majority_vote<I: IntoIterator<Item = Label>>(labels: I) -> AggregateLabel {
    let mut vote_counts: BTreeMap<Label, usize> = BTreeMap::new();
    let mut n_missing = 0;
    for l in labels {
        if l == Label::Missing {
            n_missing += 1;
        } else {
            *vote_counts.entry(l).or_default() += 1;
        }
    }
    let top = vote_counts.values().copied().max().unwrap_or(0);
    let mut leaders = vote_counts.iter().filter(|(_, &c)| c == top);
    let value = match (top, leaders.next(), leaders.next()) {
        (0, _, _) | (_, _, Some(_)) | (_, None, _) => AggregateValue::Undefined,
        (_, Some((l, _)), None) => AggregateValue::from_label(*l).expect("missing never counted"),
    };
    AggregateLabel {
        value,
        vote_counts,
        n_missing,
    }
}

/// Compares every SCS score with every LCS score: higher SCS votes
/// sarcastic, higher LCS votes non-sarcastic, equal scores cast no vote.
/// The final label is the majority over cast votes.
pub fn comp_vote(scs_scores: &[f64], lcs_scores: &[f64]) -> Result<AggregateLabel, ScoreOutOfRange> {
    for &s in scs_scores.iter().chain(lcs_scores) {
        if !(0.0..=1.0).contains(&s) {
            return Err(ScoreOutOfRange(s));
        }
    }
    let votes = scs_scores.iter().flat_map(|&s| {
        lcs_scores.iter().filter_map(move |&l| {
            if s > l {
                Some(Label::Sarcastic)
            } else if s < l {
                Some(Label::NonSarcastic)
            } else {
                None
            }
        })
    });
    Ok(majority_vote(votes))
}

/// Majority over per-model aggregate labels; undefined models do not vote
/// and are counted in `n_missing`.
pub fn cross_model_vote<'a, I>(per_model: I) -> AggregateLabel
where
    I: IntoIterator<Item = (&'a String, &'a AggregateValue)>,
{
    majority_vote(
        per_model
            .into_iter()
            .map(|(_, v)| v.as_label().unwrap_or(Label::Missing)),
    )
}

/// Majority label per sample for one task, over whichever variants are
/// present in `judgments`.
pub fn aggregate_by_sample(judgments: &[ModelJudgment], task: TaskKind) -> BTreeMap<String, AggregateLabel> {
    let mut by_sample: BTreeMap<&str, Vec<Label>> = BTreeMap::new();
    for j in judgments.iter().filter(|j| j.task == task) {
        by_sample.entry(&j.sample_id).or_default().push(j.label);
    }
    by_sample
        .into_iter()
        .map(|(id, labels)| (id.to_string(), majority_vote(labels)))
        .collect()
}

/// COMP label per sample from the SCS and LCS judgments in `judgments`.
/// Failed judgments carry no score and are dropped before comparison.
pub fn comp_by_sample(judgments: &[ModelJudgment]) -> BTreeMap<String, AggregateLabel> {
    let mut scores: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for j in judgments {
        let entry = match j.task {
            TaskKind::Scs | TaskKind::Lcs => scores.entry(&j.sample_id).or_default(),
            _ => continue,
        };
        if let (Some(s), false) = (j.score, j.is_missing()) {
            match j.task {
                TaskKind::Scs => entry.0.push(s),
                _ => entry.1.push(s),
            }
        }
    }
    scores
        .into_iter()
        .map(|(id, (scs, lcs))| {
            let agg = comp_vote(&scs, &lcs).expect("parsed scores are in range");
            (id.to_string(), agg)
        })
        .collect()
}

/// Samples whose TSC majority label is neutral.
pub fn neutral_set_tsc(judgments: &[ModelJudgment]) -> BTreeSet<String> {
    debug_assert!(single_model(judgments), "neutral sets are per model");
    aggregate_by_sample(judgments, TaskKind::Tsc)
        .into_iter()
        .filter(|(_, a)| a.value == AggregateValue::Neutral)
        .map(|(id, _)| id)
        .collect()
}

/// Samples whose majority SCS-derived and LCS-derived labels disagree.
///
/// "Divergence" between the two perspectives is read as a conflict between
/// the per-task aggregate labels. Samples where either aggregate is
/// undefined (or absent) are excluded.
pub fn neutral_set_scs_lcs(judgments: &[ModelJudgment]) -> BTreeSet<String> {
    debug_assert!(single_model(judgments), "neutral sets are per model");
    let scs = aggregate_by_sample(judgments, TaskKind::Scs);
    let lcs = aggregate_by_sample(judgments, TaskKind::Lcs);
    scs.into_iter()
        .filter_map(|(id, s)| {
            let l = lcs.get(&id)?;
            let defined = s.value != AggregateValue::Undefined && l.value != AggregateValue::Undefined;
            (defined && s.value != l.value).then_some(id)
        })
        .collect()
}

fn single_model(judgments: &[ModelJudgment]) -> bool {
    judgments.windows(2).all(|w| w[0].model == w[1].model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{derive_label_lcs, derive_label_scs, ParseStatus};
    use proptest::prelude::*;
    use Label::*;

    fn judgment(sample: &str, task: TaskKind, variant: u32, label: Label, score: Option<f64>) -> ModelJudgment {
        ModelJudgment {
            sample_id: sample.into(),
            model: "m".into(),
            task,
            variant_id: variant,
            label,
            rationale: String::new(),
            score,
            nll: None,
            nll_mean: None,
            parse_status: if label == Missing {
                ParseStatus::Failed
            } else {
                ParseStatus::Ok
            },
            failure: None,
        }
    }

    fn scored(sample: &str, task: TaskKind, variant: u32, score: f64) -> ModelJudgment {
        let label = match task {
            TaskKind::Scs => derive_label_scs(score).unwrap(),
            _ => derive_label_lcs(score).unwrap(),
        };
        judgment(sample, task, variant, label, Some(score))
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            majority_vote([Sarcastic, Sarcastic, NonSarcastic]).value,
            AggregateValue::Sarcastic
        );
        assert_eq!(
            majority_vote([Sarcastic, NonSarcastic, Neutral]).value,
            AggregateValue::Undefined
        );
        let empty = majority_vote([]);
        assert_eq!(empty.value, AggregateValue::Undefined);
        assert_eq!(empty.votes_cast(), 0);
        let with_missing = majority_vote([Missing, Missing, NonSarcastic]);
        assert_eq!(with_missing.value, AggregateValue::NonSarcastic);
        assert_eq!(with_missing.n_missing, 2);
        assert!(!with_missing.vote_counts.contains_key(&Missing));
    }

    #[test]
    fn comp_examples() {
        let a = comp_vote(&[0.9, 0.9, 0.9], &[0.2, 0.2, 0.2]).unwrap();
        assert_eq!(a.value, AggregateValue::Sarcastic);
        assert_eq!(a.vote_counts[&Sarcastic], 9);
        let b = comp_vote(&[0.5], &[0.5]).unwrap();
        assert_eq!(b.value, AggregateValue::Undefined);
        assert_eq!(b.votes_cast(), 0);
        let c = comp_vote(&[0.6, 0.4], &[0.5, 0.5]).unwrap();
        assert_eq!(c.vote_counts[&Sarcastic], 2);
        assert_eq!(c.vote_counts[&NonSarcastic], 2);
        assert_eq!(c.value, AggregateValue::Undefined);
        assert!(comp_vote(&[1.2], &[0.1]).is_err());
        assert_eq!(comp_vote(&[0.7], &[]).unwrap().value, AggregateValue::Undefined);
    }

    #[test]
    fn cross_model_examples() {
        let mk = |s: usize, n: usize, u: usize| -> BTreeMap<String, AggregateValue> {
            let mut m = BTreeMap::new();
            let mut i = 0;
            for (count, v) in [
                (s, AggregateValue::Sarcastic),
                (n, AggregateValue::NonSarcastic),
                (u, AggregateValue::Undefined),
            ] {
                for _ in 0..count {
                    m.insert(format!("m{i:02}"), v);
                    i += 1;
                }
            }
            m
        };
        assert_eq!(cross_model_vote(&mk(7, 5, 0)).value, AggregateValue::Sarcastic);
        assert_eq!(cross_model_vote(&mk(6, 6, 0)).value, AggregateValue::Undefined);
        let r = cross_model_vote(&mk(5, 5, 2));
        assert_eq!(r.value, AggregateValue::Undefined);
        assert_eq!(r.n_missing, 2);
    }

    #[test]
    fn tsc_neutral_set() {
        let js = vec![
            judgment("a", TaskKind::Tsc, 1, Neutral, Some(0.5)),
            judgment("a", TaskKind::Tsc, 2, Neutral, Some(0.5)),
            judgment("a", TaskKind::Tsc, 3, Sarcastic, Some(0.5)),
            judgment("b", TaskKind::Tsc, 1, Neutral, Some(0.5)),
            judgment("b", TaskKind::Tsc, 2, Sarcastic, Some(0.5)),
            judgment("b", TaskKind::Tsc, 3, NonSarcastic, Some(0.5)),
            judgment("c", TaskKind::Bsc, 1, Sarcastic, Some(0.5)),
        ];
        assert_eq!(neutral_set_tsc(&js), BTreeSet::from(["a".to_string()]));
        assert!(neutral_set_tsc(&js[3..]).is_empty());
    }

    #[test]
    fn scs_lcs_neutral_set() {
        let js = vec![
            // a: SCS says sarcastic, LCS says literal -> conflict
            scored("a", TaskKind::Scs, 1, 0.8),
            scored("a", TaskKind::Scs, 2, 0.9),
            scored("a", TaskKind::Lcs, 1, 0.7),
            scored("a", TaskKind::Lcs, 2, 0.6),
            // b: both sarcastic
            scored("b", TaskKind::Scs, 1, 0.8),
            scored("b", TaskKind::Lcs, 1, 0.1),
            // c: SCS tie -> undefined, excluded
            scored("c", TaskKind::Scs, 1, 0.8),
            scored("c", TaskKind::Scs, 2, 0.1),
            scored("c", TaskKind::Lcs, 1, 0.9),
        ];
        assert_eq!(neutral_set_scs_lcs(&js), BTreeSet::from(["a".to_string()]));
    }

    #[test]
    fn comp_by_sample_drops_failed() {
        let mut js = vec![scored("a", TaskKind::Scs, 1, 0.9), scored("a", TaskKind::Lcs, 1, 0.1)];
        js.push(judgment("a", TaskKind::Lcs, 2, Missing, None));
        let comp = comp_by_sample(&js);
        assert_eq!(comp["a"].value, AggregateValue::Sarcastic);
        assert_eq!(comp["a"].votes_cast(), 1);
    }

    fn label_strategy() -> impl Strategy<Value = Label> {
        prop_oneof![Just(Sarcastic), Just(NonSarcastic), Just(Neutral), Just(Missing)]
    }

    proptest! {
        #[test]
        fn majority_is_permutation_invariant(mut v in proptest::collection::vec(label_strategy(), 0..12), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = majority_vote(v.clone());
            v.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(a, majority_vote(v));
        }

        #[test]
        fn adding_winner_vote_keeps_winner(v in proptest::collection::vec(label_strategy(), 1..12)) {
            let a = majority_vote(v.clone());
            if let Some(winner) = a.value.as_label() {
                let mut more = v;
                more.push(winner);
                prop_assert_eq!(majority_vote(more).value, a.value);
            }
        }
    }
}
