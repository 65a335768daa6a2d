use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::coverage::CoverageReport;
use crate::mcts::RoundSummary;
use crate::mutation::CompleteAction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    #[default]
    Mcts,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetReached,
    Timeout,
    MaxBatches,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub batch: usize,
    pub seed_indices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    pub best_increase: f64,
    pub committed: bool,
    pub actions: Vec<CompleteAction>,
    pub evaluations: usize,
    pub rounds: Vec<RoundSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdversarialSummary {
    pub count: usize,
    pub total: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub config_digest: String,
    pub model_digest: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub arm: Arm,
    pub complete: bool,
    pub stop_reason: StopReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub initial_coverage: f64,
    pub final_coverage: f64,
    pub coverage_increase: f64,
    pub coverage: CoverageReport,
    pub initial_test_inputs: usize,
    pub new_inputs: usize,
    pub committed_batches: usize,
    pub batches_attempted: usize,
    /// Candidate evaluations made by the searches.
    pub search_evaluations: usize,
    /// All forward-batch calls, including the initial test set and commits.
    pub forward_batches: usize,
    pub adversarial: AdversarialSummary,
    pub iterations: Vec<IterationRecord>,
    pub fingerprint: Fingerprint,
    /// Kept out of `report.json` so identical runs produce identical bytes.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub coverage_increase: f64,
    pub final_coverage: f64,
    pub new_inputs: usize,
    pub adversarial_percent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (n − 1); zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub arm: Arm,
    pub runs: Vec<RunSummary>,
    pub coverage_increase: MeanStd,
    pub new_inputs: MeanStd,
    pub adversarial_percent: MeanStd,
}

impl RepeatSummary {
    pub fn new(arm: Arm, runs: Vec<RunSummary>) -> Self {
        let col = |f: fn(&RunSummary) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        RepeatSummary {
            arm,
            coverage_increase: col(|r| r.coverage_increase),
            new_inputs: col(|r| r.new_inputs as f64),
            adversarial_percent: col(|r| r.adversarial_percent),
            runs,
        }
    }
}
