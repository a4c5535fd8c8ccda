mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sarceval_annotate::{alpha_report, AlphaReport, AnnotateError, Distribution, Session, SessionConfig, ThreeLevel};
use sarceval_core::TaskKind;

use common::make_run;

fn open(dir: &std::path::Path) -> Session {
    Session::open(dir, &SessionConfig::default()).unwrap()
}

#[test]
fn items_are_sorted_and_ids_stable() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1"], &[TaskKind::Bsc], 3, 4);
    let a = open(dir.path());
    let ids: Vec<_> = a.items().iter().map(|i| i.item_id.clone()).collect();
    assert_eq!(ids.len(), 12);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    drop(a);
    let b = open(dir.path());
    assert_eq!(b.items().iter().map(|i| i.item_id.clone()).collect::<Vec<_>>(), ids);
}

#[test]
fn fresh_session_of_3600_items_serves_the_first() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["gpt-4o"], &TaskKind::ALL, 3, 300);
    let s = open(dir.path());
    assert_eq!(s.items().len(), 3600);
    assert_eq!(s.next_item("ann1").unwrap().unwrap().item_id, s.items()[0].item_id);
}

#[test]
fn walk_to_completion_rates_every_item_once() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1", "m2"], &[TaskKind::Bsc, TaskKind::Scs], 2, 3);
    let s = open(dir.path());
    let mut seen = BTreeSet::new();
    while let Some(item) = s.next_item("a").unwrap() {
        let id = item.item_id.clone();
        assert!(seen.insert(id.clone()), "served twice: {id}");
        s.submit("a", &id, 1).unwrap();
    }
    assert_eq!(seen.len(), s.items().len());
    let p = s.progress("a").unwrap();
    assert_eq!((p.rated, p.remaining), (s.items().len(), 0));
}

#[test]
fn interleaved_annotators_keep_separate_frontiers() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1"], &[TaskKind::Tsc], 1, 4);
    let s = open(dir.path());
    let first = s.items()[0].item_id.clone();
    s.submit("a", &first, 2).unwrap();
    assert_eq!(s.next_item("a").unwrap().unwrap().item_id, s.items()[1].item_id);
    assert_eq!(s.next_item("b").unwrap().unwrap().item_id, first);
    s.submit("b", &first, -2).unwrap();
    s.submit("b", &s.items()[1].item_id.clone(), 0).unwrap();
    assert_eq!(s.next_item("b").unwrap().unwrap().item_id, s.items()[2].item_id);
    assert_eq!(s.next_item("a").unwrap().unwrap().item_id, s.items()[1].item_id);
}

#[test]
fn submit_validation_and_replacement() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1"], &[TaskKind::Bsc], 1, 2);
    let s = open(dir.path());
    let id = s.items()[0].item_id.clone();
    assert!(matches!(s.submit("a", &id, 4), Err(AnnotateError::LikertOutOfRange(4))));
    assert!(matches!(s.submit("a", "nope", 1), Err(AnnotateError::UnknownItem(_))));
    assert!(matches!(s.submit("", &id, 1), Err(AnnotateError::EmptyAnnotator)));
    s.submit("a", &id, 2).unwrap();
    s.submit("a", &id, -1).unwrap();
    let d = s.distribution("m1", TaskKind::Bsc).unwrap();
    assert_eq!(d.n, 1);
    assert_eq!(d.rows[2].count, 1);
    assert_eq!(d.rows[5].count, 0);
    drop(s);
    // Durable: the replacement survives a reopen.
    let s = open(dir.path());
    let d = s.distribution("m1", TaskKind::Bsc).unwrap();
    assert_eq!((d.n, d.rows[2].likert, d.rows[2].count), (1, -1, 1));
}

#[test]
fn roster_rejects_unknown_annotators() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1"], &[TaskKind::Bsc], 1, 1);
    let cfg = SessionConfig {
        annotators: vec!["alice".into()],
        ..Default::default()
    };
    let s = Session::open(dir.path(), &cfg).unwrap();
    assert!(s.next_item("alice").unwrap().is_some());
    assert!(matches!(
        s.next_item("mallory"),
        Err(AnnotateError::UnknownAnnotator(_))
    ));
}

#[test]
fn distribution_counts_and_empty_group() {
    let dir = tempfile::tempdir().unwrap();
    make_run(dir.path(), &["m1", "m2"], &[TaskKind::Bsc], 1, 4);
    let s = open(dir.path());
    assert!(matches!(
        s.distribution("m1", TaskKind::Bsc),
        Err(AnnotateError::EmptyGroup { .. })
    ));
    let m1: Vec<_> = s
        .items()
        .iter()
        .filter(|i| i.model == "m1")
        .map(|i| i.item_id.clone())
        .collect();
    for id in &m1 {
        s.submit("a", id, 2).unwrap();
    }
    let d = s.distribution("m1", TaskKind::Bsc).unwrap();
    assert_eq!(d.rows.len(), 7);
    assert_eq!(d.rows[5].percent, 100.0);
    assert_eq!(d.rows[5].label, "Mod. Agreement (+2)");
    assert!(s.distribution("m2", TaskKind::Bsc).is_err());
}

#[test]
fn published_gpt4o_bsc_row_shape() {
    // 900 ratings whose shares reproduce the published row.
    let d = Distribution::from_counts("gpt-4o", TaskKind::Bsc, [0, 0, 7, 0, 249, 441, 203]).unwrap();
    let labels: Vec<&str> = d.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(
        labels,
        [
            "Strong Disagr. (-3)",
            "Mod. Disagr. (-2)",
            "Disagreement (-1)",
            "Uncertainty (0)",
            "Agreement (+1)",
            "Mod. Agreement (+2)",
            "Strong Agreement (+3)"
        ]
    );
    let shown: Vec<String> = d.rows.iter().map(|r| format!("{:.2}", r.percent)).collect();
    assert_eq!(shown, ["0.00", "0.00", "0.78", "0.00", "27.67", "49.00", "22.56"]);
    let total: f64 = d.rows.iter().map(|r| r.percent).sum();
    assert!((total - 100.0).abs() < 1e-9);
}

/// Coincidence-matrix alpha computed directly from nested maps.
fn oracle(ratings: &BTreeMap<String, BTreeMap<String, ThreeLevel>>) -> f64 {
    let cats = [ThreeLevel::Disagreement, ThreeLevel::Uncertainty, ThreeLevel::Agreement];
    let mut o = [[0.0f64; 3]; 3];
    for by_annotator in ratings.values() {
        let vals: Vec<usize> = by_annotator
            .values()
            .map(|c| cats.iter().position(|x| x == c).unwrap())
            .collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    o[vals[i]][vals[j]] += 1.0 / (m as f64 - 1.0);
                }
            }
        }
    }
    let nc: Vec<f64> = (0..3).map(|c| o[c].iter().sum()).collect();
    let n: f64 = nc.iter().sum();
    let mut d_o = 0.0;
    let mut d_e = 0.0;
    for c in 0..3 {
        for k in 0..3 {
            if c != k {
                d_o += o[c][k];
                d_e += nc[c] * nc[k];
            }
        }
    }
    1.0 - (n - 1.0) * d_o / d_e
}

#[test]
fn alpha_matches_oracle_on_random_three_by_fifty() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let mut triples = Vec::new();
        let mut mapped: BTreeMap<String, BTreeMap<String, ThreeLevel>> = BTreeMap::new();
        for item in 0..50 {
            for ann in ["x", "y", "z"] {
                if rng.random_bool(0.1) {
                    continue;
                }
                let likert: i8 = rng.random_range(-3..=3);
                let id = format!("i{item}");
                mapped
                    .entry(id.clone())
                    .or_default()
                    .insert(ann.into(), ThreeLevel::from_likert(likert));
                triples.push((ann.to_string(), id, likert));
            }
        }
        let got = alpha_report(triples.iter().map(|(a, i, l)| (a.as_str(), i.as_str(), *l))).unwrap();
        let AlphaReport::Ok { alpha, .. } = got else {
            panic!("{got:?}")
        };
        assert!((alpha - oracle(&mapped)).abs() < 1e-9);
        // Renaming annotators does not change the value.
        let renamed = alpha_report(triples.iter().map(|(a, i, l)| {
            let a = match a.as_str() {
                "x" => "q",
                "y" => "r",
                _ => "s",
            };
            (a, i.as_str(), *l)
        }))
        .unwrap();
        assert_eq!(renamed, got);
    }
}

#[test]
fn alpha_degenerate_and_perfect() {
    let collapsed = [
        ("a", "1", 1),
        ("b", "1", 2),
        ("c", "1", 3),
        ("a", "2", 3),
        ("b", "2", 1),
        ("c", "2", 2),
    ];
    assert!(matches!(alpha_report(collapsed), Ok(AlphaReport::Degenerate { .. })));
    let perfect = [("a", "1", 1), ("b", "1", 3), ("a", "2", -2), ("b", "2", -1)];
    assert!(matches!(alpha_report(perfect), Ok(AlphaReport::Ok { alpha, .. }) if alpha == 1.0));
    assert!(matches!(
        alpha_report([("a", "1", 1), ("b", "2", 1)]),
        Err(AnnotateError::InsufficientOverlap)
    ));
}
