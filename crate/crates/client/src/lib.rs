//! Network side of the evaluation harness: the chat-completions client, the
//! retry ladder driver, the matrix runner and a scripted mock endpoint.

pub mod backend;
pub mod embed;
pub mod matrix;
pub mod mock;
pub mod retry;
pub mod wire;

pub use backend::{ChatBackend, HttpClient, ModelSpec, QueryError};
pub use matrix::{run_matrix, RunSummary};
pub use mock::{MockScript, MockServer};
pub use retry::{parse_validator, query_with_retry_ladder, LadderError};
