//! HTTP routes over a shared [`ReviewStore`].

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use mathdeid_core::corpus::PiiType;
use mathdeid_core::surrogation::{AnnotationItem, Evaluation, ItemStatus, Vote, VoteDirection};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::store::{ContextLine, ItemFilter, ReviewStore, StoreError};

pub const TOKEN_HEADER: &str = "x-review-token";
pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Mutex<ReviewStore>>,
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, ReviewStore> {
    state.store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Default, Deserialize)]
pub struct ListQuery {
    pub status: Option<String>,
    pub iteration: Option<u32>,
    #[serde(rename = "type")]
    pub pii_type: Option<String>,
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemPage {
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub items: Vec<AnnotationItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemView {
    pub item: AnnotationItem,
    pub context: Vec<ContextLine>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct VoteBody {
    reviewer_id: String,
    direction: VoteDirection,
    #[serde(default)]
    note: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideBody {
    evaluation: Evaluation,
    #[serde(default)]
    surrogate: Option<String>,
    #[serde(default)]
    reviewer_id: Option<String>,
}

async fn list_items(State(state): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<ItemPage> {
    let filter = ItemFilter {
        status: q
            .status
            .as_deref()
            .map(str::parse::<ItemStatus>)
            .transpose()
            .map_err(ApiError::bad_request)?,
        iteration: q.iteration,
        pii_type: q
            .pii_type
            .as_deref()
            .map(str::parse::<PiiType>)
            .transpose()
            .map_err(|e| ApiError::bad_request(e.to_string()))?,
    };
    let page = q.page.unwrap_or(1).max(1);
    let per_page = q.per_page.unwrap_or(DEFAULT_PER_PAGE).clamp(1, MAX_PER_PAGE);
    let store = lock(&state);
    let matching = store.list(&filter);
    Ok(Json(ItemPage {
        total: matching.len(),
        page,
        per_page,
        items: matching
            .into_iter()
            .skip((page - 1) * per_page)
            .take(per_page)
            .cloned()
            .collect(),
    }))
}

async fn get_item(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<ItemView> {
    let store = lock(&state);
    let item = store
        .get(&id)
        .ok_or_else(|| ApiError::from(StoreError::NotFound(id.clone())))?;
    Ok(Json(ItemView {
        context: store.context(item),
        item: item.clone(),
    }))
}

async fn vote(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<AnnotationItem> {
    let body: VoteBody = parse_body(&body)?;
    if body.reviewer_id.trim().is_empty() {
        return Err(ApiError::bad_request("reviewer_id must not be empty"));
    }
    let vote = Vote {
        reviewer_id: body.reviewer_id,
        direction: body.direction,
        timestamp: Utc::now(),
        note: body.note,
    };
    Ok(Json(lock(&state).vote(&id, vote)?))
}

async fn override_item(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<AnnotationItem> {
    let body: OverrideBody = parse_body(&body)?;
    Ok(Json(lock(&state).override_item(
        &id,
        body.evaluation,
        body.surrogate,
        body.reviewer_id,
    )?))
}

async fn resolution(State(state): State<AppState>, Path(k): Path<u32>) -> ApiResult<serde_json::Value> {
    Ok(Json(
        serde_json::to_value(lock(&state).resolution(k)).expect("resolution serializes"),
    ))
}

async fn close_iteration(State(state): State<AppState>, Path(k): Path<u32>) -> ApiResult<serde_json::Value> {
    let mut store = lock(&state);
    let closed = store.close_iteration(k)?;
    Ok(Json(json!({ "iteration": k, "items": closed })))
}

async fn stats(State(state): State<AppState>) -> ApiResult<crate::store::Stats> {
    Ok(Json(lock(&state).stats()))
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = request.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong review token".into()).into_response();
        }
    }
    next.run(request).await
}

async fn api_not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "no such endpoint".into())
}

/// `/api/*` routes, plus static files from `static_dir` at `/` when given.
pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/items", get(list_items))
        .route("/items/{id}", get(get_item))
        .route("/items/{id}/vote", post(vote))
        .route("/items/{id}/override", post(override_item))
        .route("/iterations/{k}/resolution", get(resolution))
        .route("/iterations/{k}/close", post(close_iteration))
        .route("/stats", get(stats))
        .fallback(api_not_found)
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until the process is stopped.
pub async fn serve(
    store: ReviewStore,
    addr: std::net::SocketAddr,
    token: Option<String>,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let state = AppState {
        store: Arc::new(Mutex::new(store)),
        token,
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, static_dir)).await
}
