//! Request and response bodies of the HTTP service, shared by server and client.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::campaign::{Arm, CampaignConfig, CampaignReport, RepeatSummary};
use crate::coverage::Criterion;
use crate::fixtures::FixtureSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

/// `POST /v1/campaigns`. `seed` overrides the config's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRequest {
    pub config: CampaignConfig,
    #[serde(default)]
    pub arm: Arm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeat: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobState {
    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed)
    }
}

/// A finished campaign directory: one run, or a repeat set with its summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CampaignResult {
    Single { report: Box<CampaignReport> },
    Repeated { summary: RepeatSummary },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub arm: Arm,
    pub state: JobState,
    pub output_dir: PathBuf,
    pub repeat: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<CampaignResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `POST /v1/coverage`. `train` is required for KMN, NBC and SNAC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRequest {
    pub model: PathBuf,
    pub dataset: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    pub criterion: Criterion,
}

/// `POST /v1/report` and `POST /v1/replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignDir {
    pub campaign: PathBuf,
}

/// `POST /v1/fixtures`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixturesRequest {
    pub spec: FixtureSpec,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
