//! Read-only HTTP API over loaded artifacts.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use ura_core::corpus::render::render_page;
use ura_core::corpus::BBox;
use ura_core::qa::AnswerOptions;
use ura_core::Error;

use crate::artifacts::Artifacts;
use crate::inference::{AskRequest, AskResponse};

pub struct AppState {
    pub artifacts: Artifacts,
    pub answer: AnswerOptions,
    /// `image_path` → (manual position, page position) in the corpus.
    images: HashMap<String, (usize, usize)>,
}

impl AppState {
    pub fn new(artifacts: Artifacts, answer: AnswerOptions) -> Self {
        let images = artifacts
            .corpus
            .manuals
            .iter()
            .enumerate()
            .flat_map(|(mi, m)| m.pages.iter().enumerate().map(move |(pi, p)| (p.image_path.clone(), (mi, pi))))
            .collect();
        AppState {
            artifacts,
            answer,
            images,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManualSummary {
    pub id: String,
    pub brand: String,
    pub category: String,
    pub n_pages: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionView {
    pub id: String,
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageView {
    pub width: u32,
    pub height: u32,
    pub image_url: String,
    pub regions: Vec<RegionView>,
}

/// An error rendered as `{"error": ...}` with a matching status.
pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::NotFound { .. } => StatusCode::NOT_FOUND,
            Error::InvalidArgument(_) | Error::Validation { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/manuals", get(manuals))
        .route("/manuals/{id}/pages/{n}", get(page))
        .route("/ask", post(ask))
        .route("/images/{*path}", get(image))
        .fallback(|| async { ApiError(StatusCode::NOT_FOUND, "no such route".into()) })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn healthz(State(s): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "checkpoint": s.artifacts.model.checkpoint_hash }))
}

async fn manuals(State(s): State<Shared>) -> Json<Vec<ManualSummary>> {
    Json(
        s.artifacts
            .corpus
            .manuals
            .iter()
            .map(|m| ManualSummary {
                id: m.id.clone(),
                brand: m.brand.clone(),
                category: m.category.clone(),
                n_pages: m.pages.len(),
            })
            .collect(),
    )
}

async fn page(State(s): State<Shared>, Path((id, n)): Path<(String, String)>) -> Result<Json<PageView>, ApiError> {
    let not_found = || ApiError(StatusCode::NOT_FOUND, format!("page {n} of manual {id:?} not found"));
    let n: usize = n.parse().map_err(|_| not_found())?;
    let manual = s.artifacts.corpus.manual(&id).ok_or_else(not_found)?;
    let page = manual.pages.iter().find(|p| p.index == n).ok_or_else(not_found)?;
    Ok(Json(PageView {
        width: page.width,
        height: page.height,
        image_url: format!("/images/{}", page.image_path),
        regions: page
            .regions
            .iter()
            .map(|r| RegionView {
                id: r.id.clone(),
                label: r.label.as_str().to_string(),
                bbox: r.bbox,
            })
            .collect(),
    }))
}

async fn image(State(s): State<Shared>, Path(path): Path<String>) -> Result<Response, ApiError> {
    let &(mi, pi) = s
        .images
        .get(&path)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no image {path:?}")))?;
    let state = s.clone();
    let bytes = tokio::task::spawn_blocking(move || -> Result<Vec<u8>, Error> {
        let page = &state.artifacts.corpus.manuals[mi].pages[pi];
        let file = state.artifacts.corpus_dir.join(&page.image_path);
        if let Ok(bytes) = std::fs::read(&file) {
            return Ok(bytes);
        }
        let mut out = std::io::Cursor::new(Vec::new());
        render_page(page).write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], Bytes::from(bytes)).into_response())
}

async fn ask(State(s): State<Shared>, body: Result<Json<AskRequest>, JsonRejection>) -> Result<Json<AskResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let resp = tokio::task::spawn_blocking(move || s.artifacts.ask(&req, &s.answer))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(resp))
}

/// Serves until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state))).await?;
    Ok(())
}
