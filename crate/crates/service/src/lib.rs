//! HTTP session service for live elicitation.
//!
//! A designer answers one query at a time over JSON:
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | `GET` | `/problems` | | `[ProblemInfo]` |
//! | `POST` | `/sessions` | [`CreateSessionRequest`] fields | `201` [`SessionView`] |
//! | `GET` | `/sessions/{id}` | | [`SessionView`] |
//! | `POST` | `/sessions/{id}/answers` | `{"round": n, "answer": 0 or 1}` | [`SessionView`] |
//!
//! Errors are `{"error": "...", "field": "..."}` with status 400 (bad
//! JSON), 422 (invalid field), 404 (unknown problem or session), 409
//! (round not yet open), 410 (expired) or 500. Answers for rounds already
//! recorded return the current snapshot with 200 and record nothing.
//!
//! Each session is an append-only JSON-lines log under the data directory;
//! [`SessionStore::open`] replays them so a restarted server resumes
//! where it stopped.

pub mod api;
pub mod catalog;
pub mod events;
pub mod routes;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{
    parse_answer_request, parse_create_request, AnswerRequest, ApiError, CreateSessionRequest, ProblemInfo,
    SessionState, SessionView,
};
pub use catalog::{Catalog, ProblemEntry};
pub use events::{parse_event_log, EventLog, SessionEvent};
pub use routes::router;
pub use store::{Clock, ManualClock, SessionStore, SystemClock, DEFAULT_EXPIRY};

/// Serves `store` on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
