//! HTTP/JSON front end for the fuzzer.
//!
//! | method | path                   | body                | response        |
//! |--------|------------------------|---------------------|-----------------|
//! | GET    | `/health`              |                     | `Health`        |
//! | POST   | `/v1/campaigns`        | `CampaignRequest`   | `JobStatus` 202 |
//! | GET    | `/v1/campaigns`        |                     | `[JobStatus]`   |
//! | GET    | `/v1/campaigns/{id}`   |                     | `JobStatus`     |
//! | POST   | `/v1/coverage`         | `CoverageRequest`   | `CoverageReport`|
//! | POST   | `/v1/report`           | `CampaignDir`       | `CampaignResult`|
//! | POST   | `/v1/replay`           | `CampaignDir`       | `ReplayReport`  |
//! | POST   | `/v1/fixtures`         | `FixturesRequest`   | `FixtureManifest`|
//!
//! Campaigns run on the blocking pool; poll their status until finished.
//! Paths in requests are resolved on the server's filesystem.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nnfuzz_core::api::{
    CampaignDir, CampaignRequest, CampaignResult, CoverageRequest, ErrorBody, FixturesRequest, Health, JobState,
    JobStatus,
};
use nnfuzz_core::campaign::{self, Campaign, ReplayReport};
use nnfuzz_core::coverage::CoverageReport;
use nnfuzz_core::fixtures::{self, FixtureManifest};
use nnfuzz_core::{io, FuzzError};
use tokio::net::TcpListener;
use tokio::sync::RwLock;
use uuid::Uuid;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
    #[error("no campaign with id {0}")]
    UnknownJob(String),
    #[error("worker failed: {0}")]
    Join(#[from] tokio::task::JoinError),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownJob(_) => StatusCode::NOT_FOUND,
            ApiError::Fuzz(FuzzError::Io { source, .. }) if source.kind() == std::io::ErrorKind::NotFound => {
                StatusCode::NOT_FOUND
            }
            ApiError::Fuzz(FuzzError::Io { .. }) | ApiError::Join(_) => StatusCode::INTERNAL_SERVER_ERROR,
            ApiError::Fuzz(_) => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<RwLock<BTreeMap<String, JobStatus>>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/campaigns", post(submit_campaign).get(list_campaigns))
        .route("/v1/campaigns/{id}", get(campaign_status))
        .route("/v1/coverage", post(coverage))
        .route("/v1/report", post(report))
        .route("/v1/replay", post(replay))
        .route("/v1/fixtures", post(generate_fixtures))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new())).await
}

/// Serves on an already-bound listener in a background task.
pub fn spawn(listener: TcpListener) -> tokio::task::JoinHandle<std::io::Result<()>> {
    tokio::spawn(async move { axum::serve(listener, router(AppState::new())).await })
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn submit_campaign(
    State(state): State<AppState>,
    Json(req): Json<CampaignRequest>,
) -> Result<(StatusCode, Json<JobStatus>), ApiError> {
    let mut config = req.config;
    if let Some(seed) = req.seed {
        config.seed = seed;
    }
    let repeat = req.repeat.unwrap_or(1);
    if repeat == 0 {
        return Err(FuzzError::InvalidArgument("repeat must be at least 1".into()).into());
    }
    config.validate()?;

    let id = Uuid::new_v4().to_string();
    let status = JobStatus {
        id: id.clone(),
        arm: req.arm,
        state: JobState::Queued,
        output_dir: config.output_dir.clone(),
        repeat,
        result: None,
        error: None,
    };
    state.jobs.write().await.insert(id.clone(), status.clone());

    let jobs = state.jobs.clone();
    let arm = req.arm;
    tokio::spawn(async move {
        set_state(&jobs, &id, |j| j.state = JobState::Running).await;
        let outcome = tokio::task::spawn_blocking(move || -> nnfuzz_core::Result<CampaignResult> {
            if repeat == 1 {
                let report = Campaign::load(config)?.run(arm)?;
                Ok(CampaignResult::Single { report: Box::new(report) })
            } else {
                Ok(CampaignResult::Repeated {
                    summary: campaign::run_repeated(&config, arm, repeat)?,
                })
            }
        })
        .await;
        set_state(&jobs, &id, |j| match outcome {
            Ok(Ok(result)) => {
                j.state = JobState::Succeeded;
                j.result = Some(result);
            }
            Ok(Err(e)) => {
                tracing::warn!(id = %j.id, error = %e, "campaign failed");
                j.state = JobState::Failed;
                j.error = Some(e.to_string());
            }
            Err(e) => {
                j.state = JobState::Failed;
                j.error = Some(format!("worker failed: {e}"));
            }
        })
        .await;
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn set_state(jobs: &RwLock<BTreeMap<String, JobStatus>>, id: &str, f: impl FnOnce(&mut JobStatus)) {
    if let Some(j) = jobs.write().await.get_mut(id) {
        f(j);
    }
}

async fn list_campaigns(State(state): State<AppState>) -> Json<Vec<JobStatus>> {
    Json(state.jobs.read().await.values().cloned().collect())
}

async fn campaign_status(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<JobStatus> {
    state.jobs.read().await.get(&id).cloned().map(Json).ok_or(ApiError::UnknownJob(id))
}

/// Runs blocking work off the async runtime.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> nnfuzz_core::Result<T> + Send + 'static) -> ApiResult<T> {
    Ok(Json(tokio::task::spawn_blocking(f).await??))
}

async fn coverage(Json(req): Json<CoverageRequest>) -> ApiResult<CoverageReport> {
    blocking(move || {
        let model = io::load_model(&req.model)?;
        let dataset = io::load_dataset(&req.dataset)?;
        let train = req.train.as_ref().map(io::load_dataset).transpose()?;
        campaign::compute_coverage(&model, &dataset, train.as_ref(), req.criterion)
    })
    .await
}

async fn report(Json(req): Json<CampaignDir>) -> ApiResult<CampaignResult> {
    blocking(move || campaign::load_campaign_result(&req.campaign)).await
}

async fn replay(Json(req): Json<CampaignDir>) -> ApiResult<ReplayReport> {
    blocking(move || campaign::replay_campaign(&req.campaign)).await
}

async fn generate_fixtures(Json(req): Json<FixturesRequest>) -> ApiResult<FixtureManifest> {
    blocking(move || fixtures::generate_fixture(&req.spec, &req.out)).await
}
