use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chooser::ChooserConfig;
use crate::coverage::Criterion;
use crate::error::{FuzzError, Result};
use crate::mcts::SearchBudget;
use crate::mutation::MutatorConfig;

/// Campaign stop conditions, checked between batches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Termination {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_new_inputs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    /// Cap on batches searched, committed or not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_batches: Option<usize>,
}

fn default_criterion() -> Criterion {
    Criterion::kmn()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub model: PathBuf,
    /// Training split, used only for the neuron profile.
    pub train: PathBuf,
    /// Initial test set T.
    pub test: PathBuf,
    #[serde(default = "default_criterion")]
    pub criterion: Criterion,
    #[serde(default)]
    pub chooser: ChooserConfig,
    #[serde(default)]
    pub mutator: MutatorConfig,
    #[serde(default)]
    pub search: SearchBudget,
    #[serde(default)]
    pub termination: Termination,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_cache: Option<PathBuf>,
    /// Write `trace.jsonl` with one line per search iteration.
    #[serde(default)]
    pub trace: bool,
}

impl CampaignConfig {
    /// Reads a JSON config; relative paths resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| FuzzError::io(path, e))?;
        let mut cfg: CampaignConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.model);
        fix(&mut self.train);
        fix(&mut self.test);
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.profile_cache {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("model", &self.model), ("train", &self.train), ("test", &self.test)] {
            if !p.is_file() {
                return Err(FuzzError::InvalidConfig(format!("{what} file {} does not exist", p.display())));
            }
        }
        let t = &self.termination;
        if t.target_new_inputs.is_none_or(|n| n == 0) && t.timeout_secs.is_none() && t.max_batches.is_none() {
            return Err(FuzzError::InvalidConfig(
                "termination needs a positive target_new_inputs, a timeout or max_batches".into(),
            ));
        }
        if self.chooser.batch_size == 0 {
            return Err(FuzzError::InvalidConfig("chooser.batch_size must be positive".into()));
        }
        if self.mutator.mutations.is_empty() {
            return Err(FuzzError::InvalidConfig("mutator needs at least one mutation".into()));
        }
        self.search.validate()
    }

    /// Digest of everything that shapes the run except where its output goes.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.profile_cache = None;
        c.trace = false;
        let json = serde_json::to_vec(&c).expect("config serialises");
        crate::io::sha256_hex(&json)
    }
}
