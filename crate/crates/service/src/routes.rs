//! axum handlers.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::api::{parse_answer_request, parse_create_request, ApiError};
use crate::store::SessionStore;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.body())).into_response()
    }
}

/// Runs `f` off the async executor; elicitation steps can take a while.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn list_problems(State(store): State<Arc<SessionStore>>) -> Response {
    Json(store.problems()).into_response()
}

async fn create_session(State(store): State<Arc<SessionStore>>, body: Bytes) -> Result<Response, ApiError> {
    let req = parse_create_request(&body)?;
    let view = blocking(move || store.create(req)).await?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn get_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(store.get(&id)?).into_response())
}

async fn submit_answer(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req = parse_answer_request(&body)?;
    let view = blocking(move || store.answer(&id, req)).await?;
    Ok(Json(view).into_response())
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/problems", get(list_problems))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/answers", post(submit_answer))
        .with_state(store)
}
