//! Coverage-guided fuzzing of small convolutional classifiers, with a Monte
//! Carlo tree search choosing which image regions to mutate and how.

pub mod api;
pub mod baseline;
pub mod campaign;
pub mod chooser;
pub mod coverage;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod mcts;
pub mod model;
pub mod mutation;
pub mod tensor;

pub use campaign::{
    compute_coverage, count_adversarial, replay_campaign, run_baseline_campaign, run_campaign, run_repeated, Arm,
    Campaign, CampaignConfig, CampaignReport, ReplayReport,
};
pub use coverage::{CoverageReport, CoverageState, CoverageTracker, Criterion};
pub use error::{FuzzError, Result};
pub use io::Dataset;
pub use model::{ActivationRecord, Layer, Model};
pub use tensor::Tensor;
