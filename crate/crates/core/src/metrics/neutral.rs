use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GoldLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NeutralError {
    #[error("set is empty")]
    EmptySet,
    #[error("sample {0:?} has no gold label")]
    UnknownSample(String),
}

/// Intersection size over the size of the smaller set.
pub fn min_set_jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> Result<f64, NeutralError> {
    let smaller = a.len().min(b.len());
    if smaller == 0 {
        return Err(NeutralError::EmptySet);
    }
    Ok(a.intersection(b).count() as f64 / smaller as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtProportions {
    pub n: usize,
    pub p_sarcastic: f64,
    pub p_non_sarcastic: f64,
}

/// Share of each gold label among the neutral samples.
pub fn neutral_gt_proportions(
    neutral_ids: &BTreeSet<String>,
    gold: &BTreeMap<String, GoldLabel>,
) -> Result<GtProportions, NeutralError> {
    if neutral_ids.is_empty() {
        return Err(NeutralError::EmptySet);
    }
    let mut sarcastic = 0usize;
    for id in neutral_ids {
        match gold.get(id) {
            Some(GoldLabel::Sarcastic) => sarcastic += 1,
            Some(GoldLabel::NonSarcastic) => {}
            None => return Err(NeutralError::UnknownSample(id.clone())),
        }
    }
    let n = neutral_ids.len();
    let p_sarcastic = sarcastic as f64 / n as f64;
    Ok(GtProportions {
        n,
        p_sarcastic,
        p_non_sarcastic: (n - sarcastic) as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn msno_examples() {
        let a = BTreeSet::from([1, 2]);
        assert_eq!(min_set_jaccard(&a, &BTreeSet::from([2, 3, 4])), Ok(0.5));
        assert_eq!(min_set_jaccard(&a, &BTreeSet::from([0, 1, 2, 9])), Ok(1.0));
        assert_eq!(min_set_jaccard(&a, &BTreeSet::from([7])), Ok(0.0));
        assert_eq!(min_set_jaccard(&a, &BTreeSet::new()), Err(NeutralError::EmptySet));
    }

    #[test]
    fn proportions_examples() {
        let gold: BTreeMap<String, GoldLabel> = [
            ("a", GoldLabel::Sarcastic),
            ("b", GoldLabel::NonSarcastic),
            ("c", GoldLabel::NonSarcastic),
            ("d", GoldLabel::NonSarcastic),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let all: BTreeSet<String> = gold.keys().cloned().collect();
        let p = neutral_gt_proportions(&all, &gold).unwrap();
        assert_eq!((p.p_sarcastic, p.p_non_sarcastic), (0.25, 0.75));
        let only_a = BTreeSet::from(["a".to_string()]);
        let p = neutral_gt_proportions(&only_a, &gold).unwrap();
        assert_eq!((p.p_sarcastic, p.p_non_sarcastic), (1.0, 0.0));
        assert_eq!(
            neutral_gt_proportions(&BTreeSet::new(), &gold),
            Err(NeutralError::EmptySet)
        );
        let stray = BTreeSet::from(["zz".to_string()]);
        assert!(matches!(
            neutral_gt_proportions(&stray, &gold),
            Err(NeutralError::UnknownSample(_))
        ));
    }

    proptest! {
        #[test]
        fn self_overlap_is_one(a in proptest::collection::btree_set(0u32..100, 1..30)) {
            prop_assert_eq!(min_set_jaccard(&a, &a), Ok(1.0));
        }
    }
}
