//! HTTP/JSON API used by the console. Every error body is `{code, message}`.

use crate::session::{ServiceError, SessionManager, StartRequest};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use std::sync::Arc;

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let (status, code) = match &e {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate_session"),
            ServiceError::Terminal(_) => (StatusCode::CONFLICT, "terminal_session"),
            ServiceError::NotDone(_) => (StatusCode::CONFLICT, "session_not_done"),
            ServiceError::UnknownCause { .. } => (StatusCode::NOT_FOUND, "unknown_cause"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::Config(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_config"),
            ServiceError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"code": self.code, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type AppState = Arc<SessionManager>;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/api/sessions", post(start_session).get(list_sessions))
        .route("/api/sessions/:id", get(get_session))
        .route("/api/sessions/:id/messages", get(messages))
        .route("/api/sessions/:id/feedback", post(feedback))
        .route("/api/sessions/:id/verdict", post(verdict))
        .route("/api/tools", get(tools))
        .route("/api/experience", get(experience))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(manager)
}

async fn start_session(State(m): State<AppState>, body: Result<Json<StartRequest>, JsonRejection>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(req) = body?;
    let s = m.start(req)?;
    Ok((StatusCode::CREATED, Json(json!({"session_id": s.session_id, "status": s.status}))))
}

/// Listing omits reports and transcripts; fetch a session for those.
async fn list_sessions(State(m): State<AppState>) -> Json<serde_json::Value> {
    let list: Vec<serde_json::Value> = m
        .list()
        .into_iter()
        .map(|s| {
            json!({
                "session_id": s.session_id,
                "alert": s.alert,
                "mode": s.mode,
                "status": s.status,
            })
        })
        .collect();
    Json(json!({ "sessions": list }))
}

async fn get_session(State(m): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<crate::session::Session>> {
    Ok(Json(m.get(&id)?))
}

#[derive(Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: u64,
}

async fn messages(State(m): State<AppState>, Path(id): Path<String>, q: Result<Query<SinceQuery>, QueryRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let records = m.messages_since(&id, q.since)?;
    let cursor = records.last().map_or(q.since, |r| r.seq);
    let status = m.get(&id)?.status;
    Ok(Json(json!({"messages": records, "cursor": cursor, "status": status})))
}

#[derive(Deserialize)]
struct FeedbackBody {
    text: String,
}

async fn feedback(State(m): State<AppState>, Path(id): Path<String>, body: Result<Json<FeedbackBody>, JsonRejection>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let Json(b) = body?;
    let rec = m.submit_feedback(&id, &b.text)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"accepted": true, "seq": rec.seq}))))
}

#[derive(Deserialize)]
struct VerdictBody {
    cause_id: String,
    accepted: bool,
}

async fn verdict(State(m): State<AppState>, Path(id): Path<String>, body: Result<Json<VerdictBody>, JsonRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Json(b) = body?;
    let s = m.record_verdict(&id, &b.cause_id, b.accepted)?;
    Ok(Json(json!({"session_id": s.session_id, "verdicts": s.verdicts})))
}

async fn tools(State(m): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "tools": m.resources().registry.specs() }))
}

async fn experience(State(m): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "experience": m.resources().kb.snapshot() }))
}

pub async fn serve(manager: Arc<SessionManager>, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving API");
    axum::serve(listener, router(manager)).await
}
