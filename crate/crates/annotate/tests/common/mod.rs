#![allow(dead_code)]

use std::path::Path;

use sarceval_core::ladder::LadderTrace;
use sarceval_core::parser::parse;
use sarceval_core::runstore::{CellOutcome, RunRecord, RunStore};
use sarceval_core::{CellKey, Corpus, GoldLabel, ImageRef, RawResponse, Sample, TaskKind};

pub const PNG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];

pub fn corpus(n: usize) -> Corpus {
    Corpus::new(
        (0..n)
            .map(|i| Sample {
                id: format!("s{i:04}"),
                text: format!("caption {i}"),
                image: ImageRef::Inline([&PNG[..], &[i as u8]].concat()),
                gold_label: if i % 2 == 0 {
                    GoldLabel::Sarcastic
                } else {
                    GoldLabel::NonSarcastic
                },
                source: "a".into(),
            })
            .collect(),
    )
    .unwrap()
}

fn body(task: TaskKind, i: usize) -> String {
    if task.is_classification() {
        let label = if i.is_multiple_of(3) {
            "non_sarcastic"
        } else {
            "sarcastic"
        };
        format!(r#"{{"label": "{label}", "rationale": "reason {i}", "confidence": 0.8}}"#)
    } else {
        format!(r#"{{"rationale": "reason {i}", "score": 0.{}}}"#, i % 10)
    }
}

/// Writes a finished run with one record per (model, task, variant, sample).
pub fn make_run(dir: &Path, models: &[&str], tasks: &[TaskKind], variants: u32, samples: usize) {
    let c = corpus(samples);
    let mut store = RunStore::open(dir, "fixture", &c).unwrap();
    let mut i = 0;
    for m in models {
        for &t in tasks {
            for v in 1..=variants {
                for s in c.samples() {
                    let key = CellKey::new(*m, t, v, &s.id);
                    let raw = RawResponse::text(body(t, i));
                    let judgment = parse(&raw, &key);
                    store
                        .append_record(&RunRecord::new(
                            key,
                            CellOutcome::Ok,
                            Some(raw),
                            judgment,
                            LadderTrace::default(),
                        ))
                        .unwrap();
                    i += 1;
                }
            }
        }
    }
}
