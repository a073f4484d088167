//! HTTP+JSON interface.
//!
//! | method | path                       | body                                   |
//! |--------|----------------------------|----------------------------------------|
//! | GET    | `/records?state=S`         |                                        |
//! | GET    | `/records/{id}`            |                                        |
//! | POST   | `/records/{id}/claim`      | `{"version": 3}` (optional)            |
//! | POST   | `/records/{id}/review`     | `{"version": 3, "decision": "approve"}`|
//! | POST   | `/records/{id}/cross-check`| `{"version": 4, "verdict": {"dispute": {"reason": "…"}}}` |
//! | GET    | `/export`                  |                                        |
//!
//! Mutations name the acting annotator in the `x-annotator` header. Errors
//! are `{"code": C, "message": M}` with `C` one of `conflict`, `policy`,
//! `validation`, `not_found` (or `internal`).

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::export::export_finalized;
use crate::record::{CrossVerdict, ReviewDecision, ReviewRecord, ReviewState};
use crate::{ReviewError, ReviewStore};

pub const ANNOTATOR_HEADER: &str = "x-annotator";

#[derive(Clone)]
pub struct ApiState {
    pub store: Arc<ReviewStore>,
    pub export_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: "validation".into(),
                message: message.into(),
            },
        }
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let status = match e.code() {
            "conflict" => StatusCode::CONFLICT,
            "policy" => StatusCode::FORBIDDEN,
            "validation" => StatusCode::UNPROCESSABLE_ENTITY,
            "not_found" => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self {
            status,
            body: ErrorBody {
                code: e.code().into(),
                message: e.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ClaimBody {
    #[serde(default)]
    pub version: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReviewBody {
    pub version: u64,
    pub decision: ReviewDecision,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CrossCheckBody {
    pub version: u64,
    pub verdict: CrossVerdict,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExportSummary {
    pub dir: PathBuf,
    pub sample_count: usize,
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    state: Option<String>,
}

fn annotator(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .ok_or_else(|| ApiError::bad_request(format!("missing {ANNOTATOR_HEADER} header")))
}

fn parse_body<T: DeserializeOwned + Default>(bytes: &[u8]) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(bytes)
}

fn parse_required<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("bad request body: {e}")))
}

async fn list_records(
    State(api): State<ApiState>,
    Query(q): Query<ListQuery>,
) -> ApiResult<Vec<ReviewRecord>> {
    let state = q
        .state
        .map(|s| s.parse::<ReviewState>())
        .transpose()
        .map_err(ApiError::bad_request)?;
    Ok(Json(api.store.list(state).iter().map(|r| (**r).clone()).collect()))
}

async fn get_record(State(api): State<ApiState>, UrlPath(id): UrlPath<String>) -> ApiResult<ReviewRecord> {
    Ok(Json((*api.store.get(&id)?).clone()))
}

async fn claim(
    State(api): State<ApiState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<ReviewRecord> {
    let who = annotator(&headers)?;
    let body: ClaimBody = parse_body(&body)?;
    Ok(Json((*api.store.claim(&id, &who, body.version)?).clone()))
}

async fn review(
    State(api): State<ApiState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<ReviewRecord> {
    let who = annotator(&headers)?;
    let body: ReviewBody = parse_required(&body)?;
    Ok(Json((*api.store.submit_review(&id, &who, body.decision, body.version)?).clone()))
}

async fn cross_check(
    State(api): State<ApiState>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<ReviewRecord> {
    let who = annotator(&headers)?;
    let body: CrossCheckBody = parse_required(&body)?;
    Ok(Json((*api.store.cross_check(&id, &who, body.verdict, body.version)?).clone()))
}

async fn export(State(api): State<ApiState>) -> ApiResult<ExportSummary> {
    let manifest = export_finalized(&api.store, &api.export_dir)?;
    Ok(Json(ExportSummary {
        dir: api.export_dir.clone(),
        sample_count: manifest.sample_count,
    }))
}

/// API routes, plus the built review UI under `/` when `static_dir` is set.
pub fn router(state: ApiState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/records", get(list_records))
        .route("/records/{id}", get(get_record))
        .route("/records/{id}/claim", post(claim))
        .route("/records/{id}/review", post(review))
        .route("/records/{id}/cross-check", post(cross_check))
        .route("/export", get(export))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
