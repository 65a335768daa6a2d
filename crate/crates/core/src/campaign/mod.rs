//! The outer fuzzing loop: choose a batch, search it, commit the best
//! mutation when it increases coverage, repeat until a stop condition.

mod config;
mod corpus;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{CampaignConfig, Termination};
pub use corpus::{batch_path, load_corpus, read_provenance, CorpusWriter, ProvenanceEntry};
pub use report::{
    AdversarialSummary, Arm, CampaignReport, Fingerprint, IterationRecord, MeanStd, RepeatSummary, RunSummary,
    StopReason,
};

use crate::api::CampaignResult;
use crate::baseline::random_search;
use crate::chooser::{choose_clustered, choose_random, kmeans_fit, ChooserKind, ClusterAssignment};
use crate::coverage::profile::{cache_key, cached_profile, profile_training_set};
use crate::coverage::{CoverageReport, CoverageState, CoverageTracker, Criterion};
use crate::error::{FuzzError, Result};
use crate::io::{self, Dataset};
use crate::mcts::{search_batch, ModelEvaluator, TraceRecord};
use crate::model::Model;
use crate::tensor::Tensor;

/// Builds the tracker for `criterion`, profiling `train` when the criterion
/// needs neuron bounds. With `cache` set the profile is read from or written to
/// that directory.
pub fn build_tracker(
    model: &Model,
    model_digest: &str,
    train: Option<&Dataset>,
    train_digest: &str,
    criterion: Criterion,
    cache: Option<&Path>,
) -> Result<Box<dyn CoverageTracker>> {
    let profile = if criterion.needs_profile() {
        let train = train.ok_or_else(|| {
            FuzzError::InvalidArgument(format!("{} needs a training set for its profile", criterion.name()))
        })?;
        Some(match cache {
            Some(dir) => cached_profile(model, train, dir, &cache_key(model.name(), model_digest, train_digest))?,
            None => profile_training_set(model, train)?,
        })
    } else {
        None
    };
    Ok(Box::new(CoverageState::new(criterion, model.neuron_layer_sizes(), profile)?))
}

/// Coverage of `dataset` from scratch, in dataset order.
pub fn compute_coverage(
    model: &Model,
    dataset: &Dataset,
    train: Option<&Dataset>,
    criterion: Criterion,
) -> Result<CoverageReport> {
    let mut tracker = build_tracker(model, "", train, "", criterion, None)?;
    tracker.commit(&model.forward_batch(&dataset.samples)?)?;
    Ok(tracker.report())
}

/// Generated inputs the model gets wrong, counted only for descendants of
/// seeds it originally got right. `total` is the whole corpus.
pub fn count_adversarial(model: &Model, corpus: &[(ProvenanceEntry, Tensor)], seeds: &Dataset) -> Result<AdversarialSummary> {
    let total = corpus.len();
    if total == 0 {
        return Ok(AdversarialSummary::default());
    }
    let seed_correct: Vec<bool> = model
        .forward_batch(&seeds.samples)?
        .iter()
        .enumerate()
        .map(|(i, r)| seeds.label(i).is_some_and(|l| l as usize == r.predicted_label))
        .collect();
    let images: Vec<Tensor> = corpus.iter().map(|(_, t)| t.clone()).collect();
    let preds = model.forward_batch(&images)?;
    let mut count = 0;
    for ((entry, _), rec) in corpus.iter().zip(&preds) {
        let correct_seed = seed_correct.get(entry.root_seed).copied().unwrap_or(false);
        if let (true, Some(label)) = (correct_seed, entry.label) {
            if label as usize != rec.predicted_label {
                count += 1;
            }
        }
    }
    Ok(AdversarialSummary {
        count,
        total,
        percent: 100.0 * count as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Timing {
    wall_clock_secs: f64,
}

#[derive(Serialize)]
struct BatchTrace<'a> {
    batch: usize,
    #[serde(flatten)]
    record: &'a TraceRecord,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| FuzzError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| FuzzError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_report(dir: impl AsRef<Path>) -> Result<CampaignReport> {
    let dir = dir.as_ref();
    let mut report: CampaignReport = read_json(&dir.join("report.json"))?;
    if let Ok(t) = read_json::<Timing>(&dir.join("timing.json")) {
        report.wall_clock_secs = t.wall_clock_secs;
    }
    Ok(report)
}

pub fn load_repeat_summary(dir: impl AsRef<Path>) -> Result<RepeatSummary> {
    read_json(&dir.as_ref().join("summary.json"))
}

/// `report.json` when the directory holds one run, else `summary.json`.
pub fn load_campaign_result(dir: impl AsRef<Path>) -> Result<CampaignResult> {
    let dir = dir.as_ref();
    if dir.join("report.json").is_file() || !dir.join("summary.json").is_file() {
        Ok(CampaignResult::Single {
            report: Box::new(load_report(dir)?),
        })
    } else {
        Ok(CampaignResult::Repeated {
            summary: load_repeat_summary(dir)?,
        })
    }
}

/// Mutable state of one run; kept apart so a failure can still be reported.
struct RunState {
    pool: Vec<Tensor>,
    labels: Vec<Option<u8>>,
    root_seed: Vec<usize>,
    corpus: Vec<(ProvenanceEntry, Tensor)>,
    iterations: Vec<IterationRecord>,
    initial_coverage: f64,
    committed_batches: usize,
    search_evaluations: usize,
    forward_batches: usize,
}

pub struct Campaign {
    config: CampaignConfig,
    model: Model,
    model_digest: String,
    test: Dataset,
    tracker: Box<dyn CoverageTracker>,
}

impl Campaign {
    /// Loads model and data and builds the configured criterion.
    pub fn load(config: CampaignConfig) -> Result<Self> {
        config.validate()?;
        let model = io::load_model(&config.model)?;
        let model_digest = io::file_digest(&config.model)?;
        let tracker = if config.criterion.needs_profile() {
            let train = io::load_dataset(&config.train)?;
            let train_digest = io::file_digest(&config.train)?;
            build_tracker(
                &model,
                &model_digest,
                Some(&train),
                &train_digest,
                config.criterion,
                config.profile_cache.as_deref(),
            )?
        } else {
            build_tracker(&model, &model_digest, None, "", config.criterion, None)?
        };
        Self::assemble(config, model, model_digest, tracker)
    }

    /// Uses `tracker` in place of the configured criterion.
    pub fn with_tracker(config: CampaignConfig, tracker: Box<dyn CoverageTracker>) -> Result<Self> {
        config.validate()?;
        let model = io::load_model(&config.model)?;
        let model_digest = io::file_digest(&config.model)?;
        Self::assemble(config, model, model_digest, tracker)
    }

    fn assemble(config: CampaignConfig, model: Model, model_digest: String, tracker: Box<dyn CoverageTracker>) -> Result<Self> {
        let test = io::load_dataset(&config.test)?;
        if test.is_empty() {
            return Err(FuzzError::EmptyDataset);
        }
        if test.sample_shape != model.input_shape() {
            return Err(FuzzError::ShapeMismatch(format!(
                "test inputs are {:?}, model expects {:?}",
                test.sample_shape,
                model.input_shape()
            )));
        }
        Ok(Campaign {
            config,
            model,
            model_digest,
            test,
            tracker,
        })
    }

    pub fn config(&self) -> &CampaignConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Runs to a stop condition and writes the campaign directory. On failure
    /// the corpus so far and a report with `complete: false` are still written
    /// before the error is returned.
    pub fn run(mut self, arm: Arm) -> Result<CampaignReport> {
        let started = Instant::now();
        let dir = self.config.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| FuzzError::io(&dir, e))?;
        write_json(&dir.join("config.json"), &self.config)?;
        let mut writer = CorpusWriter::create(&dir, self.config.trace)?;
        let mut state = RunState {
            pool: self.test.samples.clone(),
            labels: (0..self.test.len()).map(|i| self.test.label(i)).collect(),
            root_seed: (0..self.test.len()).collect(),
            corpus: Vec::new(),
            iterations: Vec::new(),
            initial_coverage: 0.0,
            committed_batches: 0,
            search_evaluations: 0,
            forward_batches: 0,
        };
        let outcome = self.drive(arm, &mut state, &mut writer, started);
        let (stop_reason, error) = match &outcome {
            Ok(r) => (*r, None),
            Err(e) => (StopReason::Error, Some(e.to_string())),
        };
        let adversarial = if error.is_none() {
            count_adversarial(&self.model, &state.corpus, &self.test)?
        } else {
            count_adversarial(&self.model, &state.corpus, &self.test).unwrap_or_default()
        };
        let final_coverage = self.tracker.value();
        let report = CampaignReport {
            arm,
            complete: error.is_none(),
            stop_reason,
            error,
            initial_coverage: state.initial_coverage,
            final_coverage,
            coverage_increase: final_coverage - state.initial_coverage,
            coverage: self.tracker.report(),
            initial_test_inputs: self.test.len(),
            new_inputs: state.corpus.len(),
            committed_batches: state.committed_batches,
            batches_attempted: state.iterations.len(),
            search_evaluations: state.search_evaluations,
            forward_batches: state.forward_batches,
            adversarial,
            iterations: state.iterations,
            fingerprint: Fingerprint {
                config_digest: self.config.digest(),
                model_digest: self.model_digest.clone(),
                seed: self.config.seed,
            },
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        write_json(&dir.join("report.json"), &report)?;
        write_json(
            &dir.join("timing.json"),
            &Timing {
                wall_clock_secs: report.wall_clock_secs,
            },
        )?;
        outcome.map(|_| report)
    }

    fn stop_reason(&self, state: &RunState, started: Instant) -> Option<StopReason> {
        let t = &self.config.termination;
        if t.target_new_inputs.is_some_and(|n| state.corpus.len() >= n) {
            return Some(StopReason::TargetReached);
        }
        if t.timeout_secs.is_some_and(|s| started.elapsed().as_secs_f64() >= s) {
            return Some(StopReason::Timeout);
        }
        if t.max_batches.is_some_and(|m| state.iterations.len() >= m) {
            return Some(StopReason::MaxBatches);
        }
        None
    }

    fn drive(&mut self, arm: Arm, state: &mut RunState, writer: &mut CorpusWriter, started: Instant) -> Result<StopReason> {
        let cfg = self.config.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        state.forward_batches += 1;
        let initial = self.model.forward_batch(&state.pool)?;
        self.tracker.commit(&initial)?;
        state.initial_coverage = self.tracker.value();

        let mut clusters: Option<ClusterAssignment> = match cfg.chooser.kind {
            ChooserKind::Random => None,
            ChooserKind::Clustered => Some(kmeans_fit(&state.pool, cfg.chooser.k.min(state.pool.len()), &mut rng)?),
        };

        loop {
            if let Some(reason) = self.stop_reason(state, started) {
                return Ok(reason);
            }
            let batch_no = state.iterations.len();
            let selection = match &clusters {
                None => choose_random(state.pool.len(), cfg.chooser.batch_size, &mut rng)?,
                Some(a) => choose_clustered(a, cfg.chooser.batch_size, &mut rng)?,
            };
            let seed: Vec<Tensor> = selection.indices.iter().map(|&i| state.pool[i].clone()).collect();

            let mut evaluator = ModelEvaluator::new(&self.model, self.tracker.as_ref());
            let outcome = match arm {
                Arm::Mcts => search_batch(&seed, &mut evaluator, &cfg.mutator, &cfg.search, &mut rng)?,
                Arm::Random => random_search(&seed, &mut evaluator, &cfg.mutator, &cfg.search, &mut rng)?,
            };
            state.forward_batches += evaluator.forward_batches;
            state.search_evaluations += outcome.evaluations;
            writer.write_trace(
                &outcome
                    .trace
                    .iter()
                    .map(|record| BatchTrace { batch: batch_no, record })
                    .collect::<Vec<_>>(),
            )?;

            // re-check against the latest committed state before accepting
            let mut committed = false;
            if outcome.best_increase > 0.0 && cfg.mutator.constraint.batch_within(&outcome.best_batch, &seed)? {
                state.forward_batches += 1;
                let records = self.model.forward_batch(&outcome.best_batch)?;
                if self.tracker.coverage_increase(&records)? > 0.0 {
                    self.tracker.commit(&records)?;
                    committed = true;
                    let corpus_batch = state.committed_batches;
                    let mut entries = Vec::with_capacity(seed.len());
                    for (&parent, image) in selection.indices.iter().zip(&outcome.best_batch) {
                        let id = state.pool.len();
                        let entry = ProvenanceEntry {
                            id,
                            batch: corpus_batch,
                            parent,
                            root_seed: state.root_seed[parent],
                            label: state.labels[parent],
                            actions: outcome.best_actions.clone(),
                        };
                        state.pool.push(image.clone());
                        state.labels.push(entry.label);
                        state.root_seed.push(entry.root_seed);
                        if let Some(a) = &mut clusters {
                            a.inherit(parent);
                        }
                        state.corpus.push((entry.clone(), image.clone()));
                        entries.push(entry);
                    }
                    writer.write_batch(corpus_batch, &outcome.best_batch, &entries)?;
                    state.committed_batches += 1;
                }
            }
            state.iterations.push(IterationRecord {
                batch: batch_no,
                seed_indices: selection.indices,
                cluster: selection.cluster,
                best_increase: outcome.best_increase,
                committed,
                actions: outcome.best_actions,
                evaluations: outcome.evaluations,
                rounds: outcome.rounds,
            });
        }
    }
}

pub fn run_campaign(config: CampaignConfig) -> Result<CampaignReport> {
    Campaign::load(config)?.run(Arm::Mcts)
}

pub fn run_baseline_campaign(config: CampaignConfig) -> Result<CampaignReport> {
    Campaign::load(config)?.run(Arm::Random)
}

/// Runs `repeat` campaigns with seeds `seed, seed + 1, …` into
/// `output_dir/run_<r>` and writes `summary.json` with mean ± std.
/// A single repeat writes straight into `output_dir`.
pub fn run_repeated(config: &CampaignConfig, arm: Arm, repeat: usize) -> Result<RepeatSummary> {
    if repeat == 0 {
        return Err(FuzzError::InvalidArgument("repeat must be at least 1".into()));
    }
    let mut runs = Vec::with_capacity(repeat);
    for r in 0..repeat {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(r as u64);
        if repeat > 1 {
            cfg.output_dir = config.output_dir.join(format!("run_{r}"));
        }
        let report = Campaign::load(cfg.clone())?.run(arm)?;
        runs.push(RunSummary {
            seed: cfg.seed,
            output_dir: cfg.output_dir,
            coverage_increase: report.coverage_increase,
            final_coverage: report.final_coverage,
            new_inputs: report.new_inputs,
            adversarial_percent: report.adversarial.percent,
        });
    }
    let summary = RepeatSummary::new(arm, runs);
    std::fs::create_dir_all(&config.output_dir).map_err(|e| FuzzError::io(&config.output_dir, e))?;
    write_json(&config.output_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Outcome of re-checking a campaign directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub campaign: PathBuf,
    pub inputs: usize,
    /// Ids whose replayed mutation differs from the stored image.
    pub replay_mismatches: Vec<usize>,
    /// Ids outside the distance limit of their parent.
    pub distance_violations: Vec<usize>,
    pub reported_coverage: f64,
    pub recomputed_coverage: f64,
    pub reported_new_inputs: usize,
    pub reported_adversarial: AdversarialSummary,
    pub recomputed_adversarial: AdversarialSummary,
    pub ok: bool,
}

/// Replays every stored input from its parent, checks the distance limit, and
/// recomputes coverage and the adversarial count from scratch.
pub fn replay_campaign(dir: impl AsRef<Path>) -> Result<ReplayReport> {
    let dir = dir.as_ref();
    let cfg: CampaignConfig = read_json(&dir.join("config.json"))?;
    let report = load_report(dir)?;
    let model = io::load_model(&cfg.model)?;
    let test = io::load_dataset(&cfg.test)?;
    let corpus = load_corpus(dir)?;

    let mut pool = test.samples.clone();
    let mut replay_mismatches = Vec::new();
    let mut distance_violations = Vec::new();
    for (entry, image) in &corpus {
        if entry.id != pool.len() {
            return Err(FuzzError::MalformedHeader(format!(
                "provenance id {} out of order (expected {})",
                entry.id,
                pool.len()
            )));
        }
        let parent = pool
            .get(entry.parent)
            .ok_or_else(|| FuzzError::IndexOutOfRange(format!("parent {} of input {}", entry.parent, entry.id)))?
            .clone();
        let replayed = cfg.mutator.apply_sequence(std::slice::from_ref(&parent), &entry.actions)?;
        if !replayed[0].bit_eq(image) {
            replay_mismatches.push(entry.id);
        }
        if !cfg.mutator.constraint.within(image, &parent)? {
            distance_violations.push(entry.id);
        }
        pool.push(image.clone());
    }

    let train = if cfg.criterion.needs_profile() {
        Some(io::load_dataset(&cfg.train)?)
    } else {
        None
    };
    let recomputed = compute_coverage(&model, &Dataset::new(test.sample_shape.clone(), pool, None)?, train.as_ref(), cfg.criterion)?;
    let recomputed_adversarial = count_adversarial(&model, &corpus, &test)?;
    let ok = replay_mismatches.is_empty()
        && distance_violations.is_empty()
        && recomputed.value == report.final_coverage
        && report.new_inputs == corpus.len()
        && recomputed_adversarial == report.adversarial;
    Ok(ReplayReport {
        campaign: dir.to_path_buf(),
        inputs: corpus.len(),
        replay_mismatches,
        distance_violations,
        reported_coverage: report.final_coverage,
        recomputed_coverage: recomputed.value,
        reported_new_inputs: report.new_inputs,
        reported_adversarial: report.adversarial,
        recomputed_adversarial,
        ok,
    })
}
