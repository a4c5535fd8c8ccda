//! Multi-perspective sarcasm evaluation of vision-language models.
//!
//! The crate covers everything that does not touch the network: corpus
//! manifests, prompt templates, response parsing, vote aggregation,
//! agreement and confidence metrics, the run store and report tables.

pub mod aggregation;
pub mod cell;
pub mod corpus;
pub mod ladder;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod report;
pub mod runstore;

pub use cell::{CellKey, MatrixSpec};
pub use corpus::{Corpus, GoldLabel, ImageRef, Sample};
pub use parser::{Label, ModelJudgment, RawResponse};
pub use prompt::{PromptLibrary, PromptTemplate, TaskKind};
