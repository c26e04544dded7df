//! HTTP API.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::config::Settings;
use crate::error::{ErrorKind, Stage, StageError};
use crate::metrics::metrics_document;
use crate::pipeline::run_analysis;
use crate::report::AnalysisReport;
use crate::request::{AnalysisRequest, Role};
use crate::store::ReportStore;
use crate::workspace::Workspace;

#[derive(Clone)]
pub struct AppState {
    pub workspace: Arc<Workspace>,
    pub store: Arc<ReportStore>,
    pub settings: Arc<Settings>,
}

impl AppState {
    pub fn new(workspace: Workspace, settings: Settings) -> Self {
        let store = ReportStore::open(&workspace.reports_dir());
        AppState { workspace: Arc::new(workspace), store: Arc::new(store), settings: Arc::new(settings) }
    }
}

pub struct ApiError(StageError);

impl From<StageError> for ApiError {
    fn from(e: StageError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match e.kind {
            ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Forbidden => StatusCode::FORBIDDEN,
            ErrorKind::Unavailable => StatusCode::SERVICE_UNAVAILABLE,
            ErrorKind::Failed if e.stage == Stage::Persist => StatusCode::INTERNAL_SERVER_ERROR,
            ErrorKind::Failed => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(json!({ "error": e.message, "stage": e.stage, "kind": e.kind }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn role_of(q: &HashMap<String, String>) -> Result<Role, StageError> {
    match q.get("role") {
        None => Ok(Role::default()),
        Some(r) => r.parse().map_err(|m: String| StageError::invalid(Stage::Request, m)),
    }
}

/// Loads a report and applies the role rule for patient-level analyses.
fn visible(state: &AppState, id: &str, q: &HashMap<String, String>) -> Result<(Arc<AnalysisReport>, Role), StageError> {
    let role = role_of(q)?;
    let report = state.store.load(id)?;
    if role == Role::Public && report.is_patient_level() {
        return Err(StageError::new(Stage::Request, ErrorKind::Forbidden, "patient-level analyses are not available to the public role"));
    }
    Ok((report, role))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn create_analysis(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let text = std::str::from_utf8(&body).map_err(|e| StageError::invalid(Stage::Request, e.to_string()))?;
    let req = AnalysisRequest::from_json(text).map_err(|m| StageError::invalid(Stage::Request, m))?;
    let st = state.clone();
    let report = tokio::task::spawn_blocking(move || run_analysis(&st.workspace, &st.store, &req, &st.settings))
        .await
        .map_err(|e| StageError::failed(Stage::Persist, e.to_string()))??;
    let location = format!("/analyses/{}", report.id);
    Ok((StatusCode::CREATED, [(header::LOCATION, location)], Json(json!({ "id": report.id })) ).into_response())
}

async fn get_analysis(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<AnalysisReport>> {
    let (r, _) = visible(&state, &id, &q)?;
    Ok(Json((*r).clone()))
}

async fn get_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (r, _) = visible(&state, &id, &q)?;
    Ok(Json(&r.graph).into_response())
}

async fn get_pathways(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (r, _) = visible(&state, &id, &q)?;
    Ok(Json(&r.pathways).into_response())
}

async fn explain_node(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (r, role) = visible(&state, &id, &q)?;
    let e = r
        .explanations_for(role)
        .and_then(|s| s.nodes.get(&nid))
        .ok_or_else(|| StageError::new(Stage::Explain, ErrorKind::NotFound, format!("UnknownNode: {nid}")))?;
    Ok(Json(e).into_response())
}

async fn explain_edge(
    State(state): State<AppState>,
    Path((id, eid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let (r, role) = visible(&state, &id, &q)?;
    let e = r
        .explanations_for(role)
        .and_then(|s| s.edges.get(&eid))
        .ok_or_else(|| StageError::new(Stage::Explain, ErrorKind::NotFound, format!("UnknownEdge: {eid}")))?;
    Ok(Json(e).into_response())
}

async fn tract_metrics(
    State(state): State<AppState>,
    Path(tract): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let role = role_of(&q)?;
    let st = state.clone();
    let doc = tokio::task::spawn_blocking(move || metrics_document(&st.workspace, &st.store, &tract, role))
        .await
        .map_err(|e| StageError::failed(Stage::Persist, e.to_string()))??;
    Ok(Json(doc).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/analyses", post(create_analysis))
        .route("/analyses/{id}", get(get_analysis))
        .route("/analyses/{id}/graph", get(get_graph))
        .route("/analyses/{id}/pathways", get(get_pathways))
        .route("/analyses/{id}/explain/node/{nid}", get(explain_node))
        .route("/analyses/{id}/explain/edge/{eid}", get(explain_edge))
        .route("/metrics/{tract}", get(tract_metrics))
        .with_state(state)
}

/// Binds and serves until interrupted.
pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), StageError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| StageError::new(Stage::Config, ErrorKind::Unavailable, format!("BindFailure: {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| StageError::failed(Stage::Config, e.to_string()))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| StageError::failed(Stage::Config, e.to_string()))
}
