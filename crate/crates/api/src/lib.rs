//! HTTP JSON service: scene browsing, grounding and the accept/reject
//! correction loop.
//!
//! Routes: `GET /api/health`, `GET /api/scenes`, `GET /api/scenes/{id}`,
//! `POST /api/ground`, `POST /api/feedback`. Errors are `{code, message}`.

mod error;
mod session;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::response::Html;
use axum::routing::{get, post};
use axum::{Json, Router};
use refground::eval::proposal_seed;
use refground::pipeline::Diagnostics;
use refground::scene::{make_proposals, ProposalMode, SceneFile};
use refground::{Aggregation, BoundingBox, GroundingEngine, GroundingResult};
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorBody};
pub use session::{Outcome, Session, SessionStore, Verdict};

pub const DEFAULT_SESSION_TIMEOUT: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub session_timeout: Duration,
    /// How proposals are produced for grounding requests.
    pub proposals: ProposalMode,
    pub proposal_seed: u64,
    /// Directory of UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ApiConfig {
    fn default() -> Self {
        ApiConfig {
            session_timeout: DEFAULT_SESSION_TIMEOUT,
            proposals: ProposalMode::GroundTruth,
            proposal_seed: 0,
            static_dir: None,
        }
    }
}

pub struct AppState {
    engine: Arc<GroundingEngine>,
    scenes: BTreeMap<String, SceneFile>,
    sessions: SessionStore,
    config: ApiConfig,
}

impl AppState {
    pub fn new(engine: GroundingEngine, scenes: Vec<SceneFile>, config: ApiConfig) -> Self {
        AppState {
            engine: Arc::new(engine),
            scenes: scenes.into_iter().map(|s| (s.id.clone(), s)).collect(),
            sessions: SessionStore::new(config.session_timeout),
            config,
        }
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    fn scene(&self, id: &str) -> Result<&SceneFile, ApiError> {
        self.scenes
            .get(id)
            .ok_or_else(|| ApiError::not_found(format!("no scene {id}")))
    }

    pub fn proposals(&self, file: &SceneFile) -> Vec<BoundingBox> {
        let seed = proposal_seed(self.config.proposal_seed, &file.id);
        make_proposals(&file.scene(), self.config.proposals, seed).boxes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDetail {
    #[serde(flatten)]
    pub scene: SceneFile,
    pub proposals: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub scene_id: String,
    pub query: String,
    #[serde(default)]
    pub aggregation: Option<Aggregation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub region_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    pub session_id: String,
    pub candidate: Candidate,
    /// 1-based position in the ranking.
    pub rank: usize,
    pub total: usize,
    pub aggregation: Aggregation,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub session_id: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStatus {
    Confirmed,
    Candidate,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub status: FeedbackStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

fn candidate(result: &GroundingResult, position: usize) -> Candidate {
    let c = &result.ranked[position];
    Candidate {
        region_index: c.region_index,
        bbox: c.bbox,
        score: c.score,
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "scenes": state.scenes.len() }))
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> Json<Vec<SceneSummary>> {
    Json(
        state
            .scenes
            .values()
            .map(|s| SceneSummary {
                id: s.id.clone(),
                width: s.width,
                height: s.height,
                objects: s.objects.len(),
            })
            .collect(),
    )
}

async fn get_scene(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SceneDetail>, ApiError> {
    let scene = state.scene(&id)?;
    Ok(Json(SceneDetail {
        scene: scene.clone(),
        proposals: state.proposals(scene),
    }))
}

async fn ground(
    State(state): State<Arc<AppState>>,
    body: Result<Json<GroundRequest>, JsonRejection>,
) -> Result<Json<GroundResponse>, ApiError> {
    let Json(req) = body?;
    if req.query.trim().is_empty() {
        return Err(ApiError::bad_request("query is empty"));
    }
    let file = state.scene(&req.scene_id)?.clone();
    let aggregation = req.aggregation.unwrap_or(state.engine.config().aggregation);
    let worker = Arc::clone(&state);
    let query = req.query.clone();
    let result = tokio::task::spawn_blocking(move || {
        let proposals = worker.proposals(&file);
        let prepared = worker.engine.prepare(&file.scene(), &proposals)?;
        worker.engine.ground_prepared_with(&prepared, &query, aggregation)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let session = Session::new(uuid::Uuid::new_v4().to_string(), req.scene_id, req.query, result);
    let position = session
        .current
        .ok_or_else(|| ApiError::internal("grounding produced an empty ranking"))?;
    let response = GroundResponse {
        session_id: session.session_id.clone(),
        candidate: candidate(&session.result, position),
        rank: position + 1,
        total: session.result.ranked.len(),
        aggregation,
        diagnostics: session.result.diagnostics.clone(),
    };
    state.sessions.insert(session);
    Ok(Json(response))
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    body: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let Json(req) = body?;
    let (outcome, result) = state
        .sessions
        .update(&req.session_id, |s| Ok((s.apply(req.verdict)?, s.result.clone())))?;
    let response = match outcome {
        Outcome::Confirmed { position } => {
            state.sessions.remove(&req.session_id);
            FeedbackResponse {
                status: FeedbackStatus::Confirmed,
                candidate: Some(candidate(&result, position)),
                rank: Some(position + 1),
            }
        }
        Outcome::Next { position } => FeedbackResponse {
            status: FeedbackStatus::Candidate,
            candidate: Some(candidate(&result, position)),
            rank: Some(position + 1),
        },
        Outcome::Exhausted => FeedbackResponse {
            status: FeedbackStatus::Exhausted,
            candidate: None,
            rank: None,
        },
    };
    Ok(Json(response))
}

async fn index() -> Html<&'static str> {
    Html("<!doctype html><title>refground</title><p>API at <code>/api</code>.</p>")
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such route")
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}", get(get_scene))
        .route("/ground", post(ground))
        .route("/feedback", post(feedback))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match &state.config.static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app.route("/", get(index)),
    };
    app.with_state(state)
}

/// Binds `addr` and serves until the process is interrupted.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
