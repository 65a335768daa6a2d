//! Coverage criteria as stateful trackers.
//!
//! Ratio criteria (NC, KMN, NBC, SNAC) map every hit to a flat class id:
//!
//! | criterion | class id                         | total classes   |
//! |-----------|----------------------------------|-----------------|
//! | NC        | `neuron`                         | `neurons`       |
//! | KMN       | `neuron * k + section`           | `k * neurons`   |
//! | NBC       | `2 * neuron` (lower), `+ 1` upper | `2 * neurons`   |
//! | SNAC      | `neuron`                         | `neurons`       |
//!
//! TFC stores penultimate-layer vectors; its value is the number stored.

pub mod profile;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{FuzzError, Result};
use crate::model::ActivationRecord;

pub use profile::{cache_key, cached_profile, profile_training_set, NeuronProfile};

pub const NC_THRESHOLD: f32 = 0.75;
pub const KMN_SECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NcScaling {
    /// Min-max scale each layer's activations per input before thresholding.
    #[default]
    PerLayerMinMax,
    Raw,
}

/// Tuned squared-distance thresholds for TFC, one per reference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TfcProfile {
    Lenet1,
    Lenet4,
    Lenet5,
    Cifar,
}

impl TfcProfile {
    pub const ALL: [TfcProfile; 4] = [TfcProfile::Lenet1, TfcProfile::Lenet4, TfcProfile::Lenet5, TfcProfile::Cifar];

    pub fn threshold(self) -> f32 {
        match self {
            TfcProfile::Lenet1 => 30.0 * 30.0,
            TfcProfile::Lenet4 => 13.0 * 13.0,
            TfcProfile::Lenet5 => 11.0 * 11.0,
            TfcProfile::Cifar => 3.0 * 3.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct CriterionRaw {
    kind: String,
    threshold: Option<f32>,
    scaling: Option<NcScaling>,
    k: Option<usize>,
    profile: Option<TfcProfile>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", try_from = "CriterionRaw")]
pub enum Criterion {
    Nc { threshold: f32, scaling: NcScaling },
    Kmn { k: usize },
    Nbc,
    Snac,
    /// `threshold` is a squared Euclidean distance.
    Tfc { threshold: f32 },
}

impl TryFrom<CriterionRaw> for Criterion {
    type Error = String;

    fn try_from(raw: CriterionRaw) -> std::result::Result<Self, String> {
        let c = match raw.kind.as_str() {
            "nc" => Criterion::Nc {
                threshold: raw.threshold.unwrap_or(NC_THRESHOLD),
                scaling: raw.scaling.unwrap_or_default(),
            },
            "kmn" => Criterion::Kmn {
                k: raw.k.unwrap_or(KMN_SECTIONS),
            },
            "nbc" => Criterion::Nbc,
            "snac" => Criterion::Snac,
            "tfc" => Criterion::Tfc {
                threshold: match (raw.threshold, raw.profile) {
                    (Some(t), _) => t,
                    (None, Some(p)) => p.threshold(),
                    (None, None) => TfcProfile::Lenet1.threshold(),
                },
            },
            other => return Err(format!("unknown criterion `{other}`")),
        };
        if let Criterion::Kmn { k: 0 } = c {
            return Err("kmn needs k >= 1".into());
        }
        Ok(c)
    }
}

impl Criterion {
    pub fn nc() -> Self {
        Criterion::Nc {
            threshold: NC_THRESHOLD,
            scaling: NcScaling::PerLayerMinMax,
        }
    }

    pub fn kmn() -> Self {
        Criterion::Kmn { k: KMN_SECTIONS }
    }

    pub fn tfc(profile: TfcProfile) -> Self {
        Criterion::Tfc {
            threshold: profile.threshold(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::Nc { .. } => "nc",
            Criterion::Kmn { .. } => "kmn",
            Criterion::Nbc => "nbc",
            Criterion::Snac => "snac",
            Criterion::Tfc { .. } => "tfc",
        }
    }

    pub fn needs_profile(&self) -> bool {
        matches!(self, Criterion::Kmn { .. } | Criterion::Nbc | Criterion::Snac)
    }

    /// Parses CLI shorthand: `nc`, `nc:0.5`, `kmn`, `kmn:100`, `nbc`, `snac`,
    /// `tfc`, `tfc:lenet4`, `tfc:900`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let bad = || FuzzError::InvalidArgument(format!("bad criterion `{s}`"));
        let mut raw = CriterionRaw {
            kind: kind.to_ascii_lowercase(),
            threshold: None,
            scaling: None,
            k: None,
            profile: None,
        };
        if let Some(a) = arg {
            match raw.kind.as_str() {
                "nc" => raw.threshold = Some(a.parse().map_err(|_| bad())?),
                "kmn" => raw.k = Some(a.parse().map_err(|_| bad())?),
                "tfc" => match a.parse::<f32>() {
                    Ok(t) => raw.threshold = Some(t),
                    Err(_) => {
                        raw.profile = Some(serde_json::from_value(serde_json::Value::String(a.to_string())).map_err(|_| bad())?)
                    }
                },
                _ => return Err(bad()),
            }
        }
        Criterion::try_from(raw).map_err(FuzzError::InvalidArgument)
    }
}

/// Classes hit by a set of records.
#[derive(Debug, Clone, PartialEq)]
pub enum CoveredClasses {
    Ids(BTreeSet<usize>),
    /// TFC vectors judged new, in evaluation order.
    Vectors(Vec<Vec<f32>>),
}

impl CoveredClasses {
    pub fn len(&self) -> usize {
        match self {
            CoveredClasses::Ids(s) => s.len(),
            CoveredClasses::Vectors(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub criterion: String,
    pub hyperparameters: Criterion,
    pub value: f64,
    pub covered: usize,
    /// `None` for TFC, which has no fixed denominator.
    pub total_classes: Option<usize>,
}

/// The operations a fuzzing loop needs from a coverage criterion.
pub trait CoverageTracker: Send + Sync {
    /// `cov(T ∪ batch) − cov(T)`; never mutates committed state.
    fn coverage_increase(&self, records: &[ActivationRecord]) -> Result<f64>;
    /// Unions the batch's classes into the committed state; returns the delta.
    fn commit(&mut self, records: &[ActivationRecord]) -> Result<f64>;
    fn value(&self) -> f64;
    fn report(&self) -> CoverageReport;
}

#[derive(Debug, Clone, PartialEq)]
enum Covered {
    Classes { hit: Vec<bool>, count: usize },
    Vectors(Vec<Vec<f32>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    criterion: Criterion,
    layer_sizes: Vec<usize>,
    profile: Option<NeuronProfile>,
    covered: Covered,
    total_classes: usize,
}

impl CoverageState {
    /// `layer_sizes` is [`crate::Model::neuron_layer_sizes`]; KMN, NBC and
    /// SNAC need a training profile.
    pub fn new(criterion: Criterion, layer_sizes: Vec<usize>, profile: Option<NeuronProfile>) -> Result<Self> {
        let neurons: usize = layer_sizes.iter().sum();
        if criterion.needs_profile() {
            match &profile {
                None => {
                    return Err(FuzzError::ProfileMismatch(format!(
                        "{} needs a training-set profile",
                        criterion.name()
                    )))
                }
                Some(p) if p.len() != neurons => {
                    return Err(FuzzError::ProfileMismatch(format!(
                        "profile covers {} neurons, model has {neurons}",
                        p.len()
                    )))
                }
                Some(p) => {
                    if let Some(i) = (0..p.len()).find(|&i| !(p.low[i] <= p.high[i])) {
                        return Err(FuzzError::ProfileMismatch(format!("neuron {i}: low > high")));
                    }
                }
            }
        }
        let total_classes = match criterion {
            Criterion::Nc { .. } | Criterion::Snac => neurons,
            Criterion::Nbc => 2 * neurons,
            Criterion::Kmn { k } => k * neurons,
            Criterion::Tfc { .. } => 0,
        };
        let covered = match criterion {
            Criterion::Tfc { .. } => Covered::Vectors(Vec::new()),
            _ => Covered::Classes {
                hit: vec![false; total_classes],
                count: 0,
            },
        };
        Ok(CoverageState {
            criterion,
            layer_sizes,
            profile,
            covered,
            total_classes,
        })
    }

    pub fn criterion(&self) -> Criterion {
        self.criterion
    }

    pub fn total_classes(&self) -> usize {
        self.total_classes
    }

    pub fn covered_count(&self) -> usize {
        match &self.covered {
            Covered::Classes { count, .. } => *count,
            Covered::Vectors(v) => v.len(),
        }
    }

    pub fn is_covered(&self, class: usize) -> bool {
        match &self.covered {
            Covered::Classes { hit, .. } => hit.get(class).copied().unwrap_or(false),
            Covered::Vectors(_) => false,
        }
    }

    pub fn stored_vectors(&self) -> &[Vec<f32>] {
        match &self.covered {
            Covered::Vectors(v) => v,
            Covered::Classes { .. } => &[],
        }
    }

    fn check_record(&self, i: usize, r: &ActivationRecord) -> Result<()> {
        let sizes: Vec<usize> = r.layers.iter().map(Vec::len).collect();
        if sizes != self.layer_sizes {
            return Err(FuzzError::ProfileMismatch(format!(
                "record {i} has layer sizes {sizes:?}, expected {:?}",
                self.layer_sizes
            )));
        }
        Ok(())
    }

    /// Every class the records hit, whether or not already committed. For TFC,
    /// the vectors that are new relative to the committed set and to earlier
    /// records in the same call.
    pub fn classes_covered_by(&self, records: &[ActivationRecord]) -> Result<CoveredClasses> {
        for (i, r) in records.iter().enumerate() {
            self.check_record(i, r)?;
        }
        match self.criterion {
            Criterion::Tfc { threshold } => {
                let stored = self.stored_vectors();
                let mut fresh: Vec<Vec<f32>> = Vec::new();
                for r in records {
                    let v = &r.penultimate;
                    if is_novel(v, stored, threshold) && is_novel(v, &fresh, threshold) {
                        fresh.push(v.clone());
                    }
                }
                Ok(CoveredClasses::Vectors(fresh))
            }
            _ => {
                let mut ids = BTreeSet::new();
                for r in records {
                    self.record_classes(r, &mut ids);
                }
                Ok(CoveredClasses::Ids(ids))
            }
        }
    }

    fn record_classes(&self, r: &ActivationRecord, out: &mut BTreeSet<usize>) {
        match self.criterion {
            Criterion::Nc { threshold, scaling } => {
                let mut base = 0;
                for layer in &r.layers {
                    let (lo, hi) = layer
                        .iter()
                        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
                    for (u, &a) in layer.iter().enumerate() {
                        let v = match scaling {
                            NcScaling::Raw => a,
                            NcScaling::PerLayerMinMax if hi > lo => (a - lo) / (hi - lo),
                            NcScaling::PerLayerMinMax => 0.0,
                        };
                        if v > threshold {
                            out.insert(base + u);
                        }
                    }
                    base += layer.len();
                }
            }
            Criterion::Kmn { k } => {
                let p = self.profile.as_ref().expect("checked in new");
                for (n, a) in r.flat().enumerate() {
                    if let Some(s) = kmn_section(a, p.low[n], p.high[n], k) {
                        out.insert(n * k + s);
                    }
                }
            }
            Criterion::Nbc => {
                let p = self.profile.as_ref().expect("checked in new");
                for (n, a) in r.flat().enumerate() {
                    if a < p.low[n] {
                        out.insert(2 * n);
                    } else if a > p.high[n] {
                        out.insert(2 * n + 1);
                    }
                }
            }
            Criterion::Snac => {
                let p = self.profile.as_ref().expect("checked in new");
                for (n, a) in r.flat().enumerate() {
                    if a > p.high[n] {
                        out.insert(n);
                    }
                }
            }
            Criterion::Tfc { .. } => unreachable!("vector criterion"),
        }
    }

    fn ratio(&self, count: usize) -> f64 {
        if self.total_classes == 0 {
            0.0
        } else {
            count as f64 / self.total_classes as f64
        }
    }
}

/// KMN section index for activation `a`; `None` outside `[low, high]`.
pub fn kmn_section(a: f32, low: f32, high: f32, k: usize) -> Option<usize> {
    if !(a >= low && a <= high) {
        return None;
    }
    if high == low {
        return Some(0);
    }
    let frac = (a as f64 - low as f64) / (high as f64 - low as f64);
    Some(((frac * k as f64).floor() as usize).min(k - 1))
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn is_novel(v: &[f32], stored: &[Vec<f32>], threshold: f32) -> bool {
    stored.iter().all(|s| squared_distance(v, s) > threshold)
}

impl CoverageTracker for CoverageState {
    fn coverage_increase(&self, records: &[ActivationRecord]) -> Result<f64> {
        match self.classes_covered_by(records)? {
            CoveredClasses::Vectors(v) => Ok(v.len() as f64),
            CoveredClasses::Ids(ids) => {
                let fresh = ids.iter().filter(|&&c| !self.is_covered(c)).count();
                Ok(self.ratio(self.covered_count() + fresh) - self.ratio(self.covered_count()))
            }
        }
    }

    fn commit(&mut self, records: &[ActivationRecord]) -> Result<f64> {
        let before = self.value();
        let classes = self.classes_covered_by(records)?;
        match (&mut self.covered, classes) {
            (Covered::Vectors(stored), CoveredClasses::Vectors(fresh)) => stored.extend(fresh),
            (Covered::Classes { hit, count }, CoveredClasses::Ids(ids)) => {
                for c in ids {
                    if !hit[c] {
                        hit[c] = true;
                        *count += 1;
                    }
                }
            }
            _ => unreachable!("criterion and covered set agree"),
        }
        Ok(self.value() - before)
    }

    fn value(&self) -> f64 {
        match &self.covered {
            Covered::Vectors(v) => v.len() as f64,
            Covered::Classes { count, .. } => self.ratio(*count),
        }
    }

    fn report(&self) -> CoverageReport {
        CoverageReport {
            criterion: self.criterion.name().to_string(),
            hyperparameters: self.criterion,
            value: self.value(),
            covered: self.covered_count(),
            total_classes: match self.criterion {
                Criterion::Tfc { .. } => None,
                _ => Some(self.total_classes),
            },
        }
    }
}
