use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::io::tds::{self, Dataset};
use crate::model::{ActivationRecord, Model};
use crate::tensor::Tensor;

/// Per-neuron activation bounds over the training set, in neuron order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronProfile {
    pub low: Vec<f32>,
    pub high: Vec<f32>,
}

impl NeuronProfile {
    pub fn from_records(records: &[ActivationRecord]) -> Result<Self> {
        let first = records.first().ok_or(FuzzError::EmptyDataset)?;
        let n = first.neuron_count();
        let mut low = vec![f32::INFINITY; n];
        let mut high = vec![f32::NEG_INFINITY; n];
        for (i, r) in records.iter().enumerate() {
            if r.neuron_count() != n {
                return Err(FuzzError::ProfileMismatch(format!(
                    "record {i} has {} neurons, expected {n}",
                    r.neuron_count()
                )));
            }
            for ((lo, hi), a) in low.iter_mut().zip(high.iter_mut()).zip(r.flat()) {
                *lo = lo.min(a);
                *hi = hi.max(a);
            }
        }
        Ok(NeuronProfile { low, high })
    }

    pub fn len(&self) -> usize {
        self.low.len()
    }

    pub fn is_empty(&self) -> bool {
        self.low.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let n = self.len();
        let ds = Dataset::new(
            vec![n],
            vec![
                Tensor::new(vec![n], self.low.clone())?,
                Tensor::new(vec![n], self.high.clone())?,
            ],
            None,
        )?;
        tds::save_dataset(&ds, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ds = tds::load_dataset(path)?;
        match ds.samples.as_slice() {
            [low, high] => Ok(NeuronProfile {
                low: low.data().to_vec(),
                high: high.data().to_vec(),
            }),
            _ => Err(FuzzError::MalformedHeader(format!(
                "profile file holds {} vectors, expected 2",
                ds.len()
            ))),
        }
    }
}

/// Exact per-neuron min/max over every training sample.
pub fn profile_training_set(model: &Model, train: &Dataset) -> Result<NeuronProfile> {
    if train.is_empty() {
        return Err(FuzzError::EmptyDataset);
    }
    let records = model.forward_batch(&train.samples)?;
    NeuronProfile::from_records(&records)
}

/// Cache file name for a (model, training set) pair.
pub fn cache_key(model_name: &str, model_digest: &str, train_digest: &str) -> String {
    let combined = crate::io::sha256_hex(format!("{model_digest}:{train_digest}").as_bytes());
    format!("{model_name}-{}.profile.tds", &combined[..16])
}

/// Loads the profile from `cache_dir` when present, otherwise computes and stores it.
pub fn cached_profile(
    model: &Model,
    train: &Dataset,
    cache_dir: &Path,
    key: &str,
) -> Result<NeuronProfile> {
    let path = cache_dir.join(key);
    if path.exists() {
        let profile = NeuronProfile::load(&path)?;
        if profile.len() == model.neuron_count() {
            return Ok(profile);
        }
    }
    let profile = profile_training_set(model, train)?;
    std::fs::create_dir_all(cache_dir).map_err(|e| FuzzError::io(cache_dir, e))?;
    profile.save(&path)?;
    Ok(profile)
}
