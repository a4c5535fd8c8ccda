//! Human evaluation over a finished run: serves model judgments as items,
//! stores seven-point Likert ratings next to the run, and reports rating
//! distributions and three-level agreement between annotators.

pub mod http;
pub mod session;

pub use http::{router, serve};
pub use session::{
    alpha_report, item_id, AlphaReport, AnnotateError, AnnotationItem, Distribution, Progress, Rating, Session,
    SessionConfig, ThreeLevel, LIKERT_LABELS,
};
