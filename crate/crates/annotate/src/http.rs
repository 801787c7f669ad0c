//! HTTP routes over [`AnnotationService`].
//!
//! | Route | Body | Response |
//! |---|---|---|
//! | `GET /frames/next?annotator=<id>` | | [`NextFrame`] |
//! | `GET /frames/{id}/image` | | image bytes |
//! | `POST /frames/{id}/labels` | [`Submission`] | [`Ack`] |
//! | `GET /progress` | | [`Progress`] |
//! | `POST /export` | optional [`ExportRequest`] | [`ExportSummary`] |
//!
//! Bodies are JSON; labels use the manifest's field names. Errors come back
//! as `{"error": <message>, "kind": <kind>}` with status 404 (unknown
//! frame), 409 (leased to someone else), 422 (invalid request) or 500.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::error::AnnotateError;
use crate::service::{AnnotationService, Submission};

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    kind: &'static str,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn invalid(message: impl Into<String>) -> Self {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            ErrorBody {
                error: message.into(),
                kind: "validation",
            },
        )
    }
}

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        let (status, kind) = match &e {
            AnnotateError::UnknownFrame(_) => (StatusCode::NOT_FOUND, "unknown_frame"),
            AnnotateError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            AnnotateError::Leased { .. } => (StatusCode::CONFLICT, "leased"),
            _ if e.is_io() => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(
            status,
            ErrorBody {
                error: e.to_string(),
                kind,
            },
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Shared = Arc<AnnotationService>;

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportRequest {
    pub path: Option<PathBuf>,
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, AnnotateError> + Send + 'static,
) -> ApiResult<T> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json).map_err(ApiError::from),
        Err(e) => Err(ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            ErrorBody {
                error: e.to_string(),
                kind: "internal",
            },
        )),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("malformed body: {e}")))
}

async fn next_frame(State(svc): State<Shared>, Query(q): Query<NextQuery>) -> impl IntoResponse {
    let Some(annotator) = q.annotator else {
        return Err(ApiError::invalid("missing annotator query parameter"));
    };
    svc.next_frame(&annotator).map(Json).map_err(ApiError::from)
}

async fn frame_image(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let path = svc.image_path(&id)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| AnnotateError::io(&path, e))?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn submit_labels(State(svc): State<Shared>, Path(id): Path<String>, body: Bytes) -> impl IntoResponse {
    let submission: Submission = parse_json(&body)?;
    blocking(move || svc.submit(&id, submission)).await
}

async fn progress(State(svc): State<Shared>) -> impl IntoResponse {
    Json(svc.progress())
}

async fn export(State(svc): State<Shared>, body: Bytes) -> impl IntoResponse {
    let req: ExportRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ExportRequest::default()
    } else {
        parse_json(&body)?
    };
    blocking(move || svc.export(req.path.as_deref())).await
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/frames/next", get(next_frame))
        .route("/frames/{id}/image", get(frame_image))
        .route("/frames/{id}/labels", post(submit_labels))
        .route("/progress", get(progress))
        .route("/export", post(export))
        .with_state(service)
}

/// Binds `addr` and serves in a background task; returns the bound address.
pub async fn spawn(service: Shared, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move { axum::serve(listener, router(service)).await });
    Ok((local, handle))
}

/// Serves until Ctrl-C.
pub async fn serve(service: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
