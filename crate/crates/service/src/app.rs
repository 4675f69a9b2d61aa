//! HTTP surface of the grounding service.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, Request, State};
use axum::http::header::AUTHORIZATION;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use cog_core::corpus::compute_concept_stats;
use cog_core::eval::PercentReport;
use cog_core::fusion::{ground_pair, rank_candidates};
use cog_core::{ConceptStats, Corpus, GroundingConfig, GroundingVerdict, ImageRef, Scorer};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use crate::error::{ApiError, QueueError};
use crate::queue::{recompute_with_decisions, Decision, QueueItem, Status, VerificationQueue};

pub const ENV_API_TOKEN: &str = "COG_API_TOKEN";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub log_path: PathBuf,
    pub grounding: GroundingConfig,
    /// Shared bearer token; `None` disables the check.
    pub api_token: Option<String>,
    /// Built verification UI, served under `/ui/`.
    pub ui_dir: Option<PathBuf>,
}

pub struct AppState {
    corpus: Arc<Corpus>,
    stats: ConceptStats,
    scorer: Arc<dyn Scorer>,
    grounding: GroundingConfig,
    api_token: Option<String>,
    queue: Mutex<VerificationQueue>,
}

impl AppState {
    pub fn new(
        corpus: Arc<Corpus>,
        scorer: Arc<dyn Scorer>,
        grounding: GroundingConfig,
        queue: VerificationQueue,
        api_token: Option<String>,
    ) -> Result<Self, ApiError> {
        grounding.validate()?;
        let stats = compute_concept_stats(corpus.entities()).map_err(|e| ApiError::Internal(e.to_string()))?;
        Ok(Self {
            corpus,
            stats,
            scorer,
            grounding,
            api_token,
            queue: Mutex::new(queue),
        })
    }

    pub fn queue(&self) -> MutexGuard<'_, VerificationQueue> {
        self.queue.lock().expect("queue lock poisoned")
    }

    /// Grounded verdicts whose actual label is known, in grounding order.
    pub fn labeled_verdicts(&self) -> Vec<(GroundingVerdict, bool)> {
        self.queue()
            .verdicts()
            .iter()
            .filter_map(|v| {
                self.corpus
                    .actual_label(&v.entity_id, &v.image_id)
                    .map(|actual| (v.clone(), actual))
            })
            .collect()
    }

    pub fn report(&self, with_human: bool) -> Result<PercentReport, ApiError> {
        let labeled = self.labeled_verdicts();
        if labeled.is_empty() {
            return Err(ApiError::BadRequest("no grounded pairs with a known label yet".into()));
        }
        let queue = self.queue();
        let decisions = if with_human { queue.decisions() } else { &[] };
        let report = recompute_with_decisions(&labeled, queue.items(), decisions, self.grounding.stages, self.grounding.strategy)?;
        Ok(report.to_percent())
    }
}

pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/v1/ground", post(ground))
        .route("/v1/rank", post(rank))
        .route("/v1/queue", get(list_queue))
        .route("/v1/queue/{item_id}", get(get_item))
        .route("/v1/queue/{item_id}/decision", post(decide))
        .route("/v1/report", get(report))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let mut app = Router::new()
        .route("/v1/health", get(health))
        .merge(api)
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app
}

async fn require_token(State(state): State<Arc<AppState>>, request: Request, next: Next) -> Result<Response, ApiError> {
    if let Some(token) = &state.api_token {
        let presented = request
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return Err(ApiError::Unauthorized);
        }
    }
    Ok(next.run(request).await)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Debug, Deserialize)]
pub struct GroundRequest {
    pub entity_id: String,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GroundResponse {
    pub verdicts: Vec<GroundingVerdict>,
    pub enqueued: usize,
}

fn resolve_images(corpus: &Corpus, ids: &[String]) -> Result<Vec<ImageRef>, ApiError> {
    ids.iter()
        .map(|id| {
            corpus
                .image(id)
                .cloned()
                .ok_or_else(|| ApiError::NotFound(format!("unknown image {id:?}")))
        })
        .collect()
}

async fn ground(State(state): State<Arc<AppState>>, Json(body): Json<GroundRequest>) -> Result<Json<GroundResponse>, ApiError> {
    let response = tokio::task::spawn_blocking(move || ground_blocking(&state, &body))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(response))
}

pub fn ground_blocking(state: &AppState, body: &GroundRequest) -> Result<GroundResponse, ApiError> {
    let entity = state
        .corpus
        .entity(&body.entity_id)
        .ok_or_else(|| ApiError::NotFound(format!("unknown entity {:?}", body.entity_id)))?;
    if body.image_ids.is_empty() {
        return Err(ApiError::BadRequest("image_ids must be non-empty".into()));
    }
    let images = resolve_images(&state.corpus, &body.image_ids)?;
    let verdicts = images
        .iter()
        .map(|image| ground_pair(entity, image, state.scorer.as_ref(), &state.stats, &state.grounding))
        .collect::<Result<Vec<_>, _>>()?;

    let mut queue = state.queue();
    queue.record_verdicts(&verdicts)?;
    let mut seen = std::collections::HashSet::new();
    let fresh: Vec<GroundingVerdict> = verdicts
        .iter()
        .filter(|v| !v.stage1_accept && !queue.is_queued(&v.entity_id, &v.image_id))
        .filter(|v| seen.insert(v.image_id.clone()))
        .cloned()
        .collect();
    let enqueued = queue.enqueue_rejections(&fresh)?;
    Ok(GroundResponse { verdicts, enqueued })
}

#[derive(Debug, Deserialize)]
pub struct RankRequest {
    pub entity_id: String,
    pub candidate_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub prediction: f64,
}

async fn rank(State(state): State<Arc<AppState>>, Json(body): Json<RankRequest>) -> Result<Json<Vec<RankedEntry>>, ApiError> {
    let ranked = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let entity = state
            .corpus
            .entity(&body.entity_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown entity {:?}", body.entity_id)))?;
        let candidates = resolve_images(&state.corpus, &body.candidate_ids)?;
        Ok(rank_candidates(entity, &candidates, state.scorer.as_ref(), state.grounding.strategy)?)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(
        ranked
            .into_iter()
            .map(|r| RankedEntry {
                id: r.image.id,
                prediction: r.prediction,
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct QueueQuery {
    status: Option<String>,
    limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<QueueItem>,
    pub total: usize,
}

async fn list_queue(State(state): State<Arc<AppState>>, Query(query): Query<QueueQuery>) -> Result<Json<QueuePage>, ApiError> {
    let status = query
        .status
        .as_deref()
        .map(str::parse::<Status>)
        .transpose()
        .map_err(ApiError::BadRequest)?;
    let queue = state.queue();
    let total = queue
        .items()
        .iter()
        .filter(|i| status.is_none_or(|s| i.status == s))
        .count();
    Ok(Json(QueuePage {
        items: queue.list(status, query.limit.unwrap_or(50)),
        total,
    }))
}

async fn get_item(State(state): State<Arc<AppState>>, Path(item_id): Path<String>) -> Result<Json<QueueItem>, ApiError> {
    state
        .queue()
        .get(&item_id)
        .cloned()
        .map(Json)
        .ok_or_else(|| QueueError::NotFound(item_id).into())
}

#[derive(Debug, Deserialize)]
pub struct DecisionRequest {
    pub annotator: String,
    pub decision: Decision,
}

async fn decide(
    State(state): State<Arc<AppState>>,
    Path(item_id): Path<String>,
    Json(body): Json<DecisionRequest>,
) -> Result<Json<QueueItem>, ApiError> {
    let item = tokio::task::spawn_blocking(move || state.queue().record_decision(&item_id, &body.annotator, body.decision))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(item))
}

#[derive(Debug, Deserialize)]
struct ReportQuery {
    with_human: Option<bool>,
}

async fn report(State(state): State<Arc<AppState>>, Query(query): Query<ReportQuery>) -> Result<Json<PercentReport>, ApiError> {
    Ok(Json(state.report(query.with_human.unwrap_or(true))?))
}

/// Binds, serves until `shutdown` resolves, and returns.
pub async fn serve<F>(state: Arc<AppState>, config: &ServiceConfig, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    serve_on(listener, state, config.ui_dir.clone(), shutdown).await
}

/// Like [`serve`] but on an already-bound listener, so callers can learn the
/// port before the first request arrives.
pub async fn serve_on<F>(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    ui_dir: Option<PathBuf>,
    shutdown: F,
) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state, ui_dir))
        .with_graceful_shutdown(shutdown)
        .await
}
