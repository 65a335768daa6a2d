//! Typed async client for the nnfuzz HTTP service.

use std::time::Duration;

use nnfuzz_core::api::{
    CampaignDir, CampaignRequest, CampaignResult, CoverageRequest, ErrorBody, FixturesRequest, Health, JobStatus,
};
use nnfuzz_core::campaign::ReplayReport;
use nnfuzz_core::coverage::CoverageReport;
use nnfuzz_core::fixtures::FixtureManifest;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    /// The service answered with an error status.
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api {
            status: status.as_u16(),
            message,
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn submit_campaign(&self, req: &CampaignRequest) -> Result<JobStatus> {
        self.post("/v1/campaigns", req).await
    }

    pub async fn campaign(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/campaigns/{id}")).await
    }

    pub async fn campaigns(&self) -> Result<Vec<JobStatus>> {
        self.get("/v1/campaigns").await
    }

    /// Polls until the job succeeds or fails.
    pub async fn wait_campaign(&self, id: &str, poll: Duration) -> Result<JobStatus> {
        loop {
            let status = self.campaign(id).await?;
            if status.state.is_finished() {
                return Ok(status);
            }
            tokio::time::sleep(poll).await;
        }
    }

    pub async fn coverage(&self, req: &CoverageRequest) -> Result<CoverageReport> {
        self.post("/v1/coverage", req).await
    }

    pub async fn report(&self, campaign: impl Into<std::path::PathBuf>) -> Result<CampaignResult> {
        self.post("/v1/report", &CampaignDir { campaign: campaign.into() }).await
    }

    pub async fn replay(&self, campaign: impl Into<std::path::PathBuf>) -> Result<ReplayReport> {
        self.post("/v1/replay", &CampaignDir { campaign: campaign.into() }).await
    }

    pub async fn fixtures(&self, req: &FixturesRequest) -> Result<FixtureManifest> {
        self.post("/v1/fixtures", req).await
    }
}
