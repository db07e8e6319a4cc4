//! JSON-over-HTTP front end for [`RankStore`].
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/sessions` | [`SessionSpec`] | `201 {"id", "items"}` |
//! | GET | `/sessions/{id}/next` | `?rater=R` | [`NextItem`] |
//! | POST | `/sessions/{id}/ranks` | [`RankSubmission`] | [`Ack`] |
//! | GET | `/sessions/{id}/results` | `?tag=T` (optional) | [`Aggregate`] |
//! | GET | `/assets/{*path}` | | `image/png` |
//!
//! Errors are `{"error": code, "message": text}` with a 4xx/5xx status.

use std::path::{Component, PathBuf};
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{Ack, Aggregate, NextItem, RankError, RankStore, RankSubmission, SessionSpec};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RankStore>,
    /// Directory served under `/assets`; `None` disables asset serving.
    pub assets: Option<PathBuf>,
}

impl IntoResponse for RankError {
    fn into_response(self) -> Response {
        let status = match &self {
            RankError::UnknownSession(_) | RankError::UnknownRater(_) | RankError::UnknownItem(_) | RankError::NoData => {
                StatusCode::NOT_FOUND
            }
            RankError::Conflict { .. } | RankError::Duplicate(_) => StatusCode::CONFLICT,
            RankError::UnknownCandidate(_)
            | RankError::IncompleteRanks(_)
            | RankError::OutOfRange { .. }
            | RankError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            RankError::Corrupt { .. } | RankError::Io(..) | RankError::Render(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.code(), "message": self.to_string() }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/ranks", post(submit_ranks))
        .route("/sessions/{id}/results", get(results))
        .route("/assets/{*path}", get(asset))
        .with_state(state)
}

async fn create_session(State(st): State<AppState>, Json(spec): Json<SessionSpec>) -> Result<Response, RankError> {
    let n = spec.items.len();
    let s = st.store.create(spec)?;
    Ok((StatusCode::CREATED, Json(json!({ "id": s.id(), "items": n }))).into_response())
}

#[derive(Deserialize)]
struct RaterQuery {
    rater: String,
}

async fn next_item(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RaterQuery>,
) -> Result<Json<NextItem>, RankError> {
    Ok(Json(st.store.get(&id)?.next_item(&q.rater)?))
}

async fn submit_ranks(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(sub): Json<RankSubmission>,
) -> Result<Json<Ack>, RankError> {
    Ok(Json(st.store.get(&id)?.submit_ranks(&sub)?))
}

#[derive(Deserialize)]
struct TagQuery {
    tag: Option<String>,
}

async fn results(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TagQuery>,
) -> Result<Json<Aggregate>, RankError> {
    Ok(Json(st.store.get(&id)?.aggregate(q.tag.as_deref())?))
}

async fn asset(State(st): State<AppState>, Path(rel): Path<String>) -> Response {
    let not_found = || (StatusCode::NOT_FOUND, Json(json!({ "error": "not_found", "message": "no such asset" }))).into_response();
    let Some(root) = &st.assets else { return not_found() };
    let rel = std::path::Path::new(&rel);
    let safe = rel.components().all(|c| matches!(c, Component::Normal(_)));
    if !safe || rel.extension().is_none_or(|e| e != "png") {
        return not_found();
    }
    match tokio::fs::read(root.join(rel)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(_) => not_found(),
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
