use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use sarceval_core::corpus::sniff_mime;
use sarceval_core::TaskKind;

use crate::session::{AnnotateError, Session};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingRequest {
    pub annotator_id: String,
    pub item_id: String,
    pub likert: i64,
}

fn err(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({"error": {"code": code, "message": message.into()}})),
    )
        .into_response()
}

impl IntoResponse for AnnotateError {
    fn into_response(self) -> Response {
        let status = match &self {
            AnnotateError::UnknownAnnotator(_) => StatusCode::FORBIDDEN,
            AnnotateError::EmptyAnnotator => StatusCode::BAD_REQUEST,
            AnnotateError::UnknownItem(_) | AnnotateError::EmptyGroup { .. } => StatusCode::NOT_FOUND,
            AnnotateError::LikertOutOfRange(_) | AnnotateError::InsufficientOverlap => StatusCode::UNPROCESSABLE_ENTITY,
            AnnotateError::Store(_) | AnnotateError::Io { .. } | AnnotateError::Corrupt { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        err(status, self.code(), self.to_string())
    }
}

type Params = Query<HashMap<String, String>>;

#[allow(clippy::result_large_err)]
fn param<'a>(q: &'a HashMap<String, String>, name: &str) -> Result<&'a str, Response> {
    q.get(name).map(String::as_str).ok_or_else(|| {
        err(
            StatusCode::BAD_REQUEST,
            "missing_parameter",
            format!("query parameter {name:?} is required"),
        )
    })
}

#[allow(clippy::result_large_err)]
fn group(q: &HashMap<String, String>) -> Result<(&str, TaskKind), Response> {
    let model = param(q, "model")?;
    let task = param(q, "task")?
        .parse::<TaskKind>()
        .map_err(|e| err(StatusCode::BAD_REQUEST, "unknown_task", e.to_string()))?;
    Ok((model, task))
}

async fn next_item(State(s): State<Arc<Session>>, Query(q): Params) -> Response {
    let annotator = match param(&q, "annotator") {
        Ok(a) => a,
        Err(r) => return r,
    };
    match s.next_item(annotator) {
        Ok(Some(item)) => Json(json!({"status": "item", "item": item})).into_response(),
        Ok(None) => Json(json!({"status": "done"})).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_item(State(s): State<Arc<Session>>, Path(id): Path<String>) -> Response {
    match s.item(&id) {
        Ok(item) => Json(item).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_image(State(s): State<Arc<Session>>, Path(id): Path<String>) -> Response {
    match s.image(&id) {
        Ok(bytes) => ([(header::CONTENT_TYPE, sniff_mime(&bytes))], bytes).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn post_rating(State(s): State<Arc<Session>>, body: Bytes) -> Response {
    let req: RatingRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return err(StatusCode::BAD_REQUEST, "invalid_body", e.to_string()),
    };
    match s.submit(&req.annotator_id, &req.item_id, req.likert) {
        Ok(rating) => Json(rating).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn distribution(State(s): State<Arc<Session>>, Query(q): Params) -> Response {
    let (model, task) = match group(&q) {
        Ok(g) => g,
        Err(r) => return r,
    };
    match s.distribution(model, task) {
        Ok(d) => Json(d).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn alpha(State(s): State<Arc<Session>>, Query(q): Params) -> Response {
    let (model, task) = match group(&q) {
        Ok(g) => g,
        Err(r) => return r,
    };
    match s.alpha(model, task) {
        Ok(a) => Json(a).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn progress(State(s): State<Arc<Session>>, Query(q): Params) -> Response {
    let annotator = match param(&q, "annotator") {
        Ok(a) => a,
        Err(r) => return r,
    };
    match s.progress(annotator) {
        Ok(p) => Json(p).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/items/next", get(next_item))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/image", get(get_image))
        .route("/ratings", post(post_rating))
        .route("/stats/distribution", get(distribution))
        .route("/stats/alpha", get(alpha))
        .route("/progress", get(progress))
        .with_state(session)
}

/// Binds `addr` and serves until the returned future is dropped or the
/// process stops. Returns the bound address through `on_bound`.
pub async fn serve(session: Arc<Session>, addr: SocketAddr, on_bound: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(session)).await
}
