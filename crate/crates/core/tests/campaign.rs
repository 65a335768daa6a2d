use std::path::Path;

use nnfuzz_core::campaign::{
    count_adversarial, load_corpus, load_report, replay_campaign, run_repeated, Arm, Campaign, CampaignConfig,
    ProvenanceEntry, StopReason,
};
use nnfuzz_core::coverage::{CoverageReport, CoverageTracker, Criterion};
use nnfuzz_core::fixtures::{generate_fixture, Architecture, FixtureManifest, FixtureSpec};
use nnfuzz_core::io::{load_dataset, load_model};
use nnfuzz_core::mcts::SearchBudget;
use nnfuzz_core::model::ActivationRecord;
use nnfuzz_core::{Result, Tensor};

fn fixture(dir: &Path) -> FixtureManifest {
    generate_fixture(&FixtureSpec::new(Architecture::MicroCnn, 11), dir.join("fx")).unwrap()
}

fn config(m: &FixtureManifest, out: &Path, extra: serde_json::Value) -> CampaignConfig {
    let mut v = serde_json::json!({
        "model": m.model, "train": m.train, "test": m.test, "output_dir": out,
        "search": {"max_depth_levels": 4, "iterations_per_root": 10},
        "chooser": {"batch_size": 16},
        "termination": {"max_batches": 3},
    });
    for (k, x) in extra.as_object().unwrap() {
        v[k] = x.clone();
    }
    serde_json::from_value(v).unwrap()
}

/// Every batch looks new.
struct AlwaysNew(f64);

impl CoverageTracker for AlwaysNew {
    fn coverage_increase(&self, _: &[ActivationRecord]) -> Result<f64> {
        Ok(1.0)
    }
    fn commit(&mut self, _: &[ActivationRecord]) -> Result<f64> {
        self.0 += 1.0;
        Ok(1.0)
    }
    fn value(&self) -> f64 {
        self.0
    }
    fn report(&self) -> CoverageReport {
        CoverageReport {
            criterion: "always".into(),
            hyperparameters: Criterion::Snac,
            value: self.0,
            covered: self.0 as usize,
            total_classes: None,
        }
    }
}

#[test]
fn zero_timeout_gives_an_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let cfg = config(&m, &dir.path().join("run"), serde_json::json!({"termination": {"timeout_secs": 0.0}}));
    let r = Campaign::load(cfg).unwrap().run(Arm::Mcts).unwrap();
    assert_eq!(r.stop_reason, StopReason::Timeout);
    assert_eq!(r.new_inputs, 0);
    assert!(r.iterations.is_empty());
    assert_eq!(r.final_coverage, r.initial_coverage);
    assert_eq!(r.adversarial.total, 0);
}

#[test]
fn always_increasing_criterion_commits_exactly_two_batches_of_64() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let cfg = config(
        &m,
        &dir.path().join("run"),
        serde_json::json!({"chooser": {"batch_size": 64}, "termination": {"target_new_inputs": 128}}),
    );
    let r = Campaign::with_tracker(cfg, Box::new(AlwaysNew(0.0))).unwrap().run(Arm::Mcts).unwrap();
    assert_eq!(r.stop_reason, StopReason::TargetReached);
    assert_eq!(r.committed_batches, 2);
    assert_eq!(r.new_inputs, 128);
    let corpus = load_corpus(&dir.path().join("run")).unwrap();
    assert_eq!(corpus.len(), 128);
    assert_eq!(corpus[0].0.id, 100);
}

#[test]
fn campaign_replays_and_recomputes_for_every_criterion() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    for (i, c) in ["nc", "kmn", "nbc", "snac", "tfc:cifar"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let cfg = config(&m, &out, serde_json::json!({"criterion": Criterion::parse(c).unwrap(), "seed": i}));
        let r = Campaign::load(cfg).unwrap().run(Arm::Mcts).unwrap();
        assert!(r.complete);
        let committed: usize = r.iterations.iter().filter(|it| it.committed).map(|it| it.seed_indices.len()).sum();
        assert_eq!(committed, r.new_inputs, "{c}");
        assert!(r.adversarial.count <= r.new_inputs);
        assert!(r.forward_batches <= 1 + r.batches_attempted * (r.iterations.iter().map(|it| it.evaluations).max().unwrap_or(0) + 1));
        for it in &r.iterations {
            assert_eq!(it.committed, it.best_increase > 0.0, "{c}");
        }
        let replay = replay_campaign(&out).unwrap();
        assert!(replay.ok, "{c}: {replay:?}");
        assert_eq!(replay.recomputed_coverage, r.final_coverage);
    }
}

#[test]
fn tampered_corpus_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("run");
    let cfg = config(&m, &out, serde_json::json!({"criterion": {"kind": "nbc"}, "termination": {"max_batches": 2}}));
    let r = Campaign::load(cfg).unwrap().run(Arm::Random).unwrap();
    assert!(r.new_inputs > 0, "fixture should yield new NBC classes");
    let p = out.join("provenance.jsonl");
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines: Vec<ProvenanceEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[0].actions.clear();
    let body: String = lines.iter().map(|e| serde_json::to_string(e).unwrap() + "\n").collect();
    std::fs::write(&p, body).unwrap();
    let replay = replay_campaign(&out).unwrap();
    assert!(!replay.ok);
    assert_eq!(replay.replay_mismatches, vec![lines[0].id]);
}

#[test]
fn identical_config_and_seed_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, arm) in [(&a, Arm::Mcts), (&b, Arm::Mcts)] {
        let cfg = config(&m, out, serde_json::json!({"chooser": {"kind": "clustered", "batch_size": 16, "k": 4}, "seed": 5}));
        Campaign::load(cfg).unwrap().run(arm).unwrap();
    }
    for f in ["report.json", "provenance.jsonl"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let corpus_a = load_corpus(&a).unwrap();
    assert!(!corpus_a.is_empty());
    for batch in 0..corpus_a.last().unwrap().0.batch + 1 {
        let name = format!("corpus/batch_{batch}.tds");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
}

#[test]
fn adversarial_count_filters_initially_misclassified_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let model = load_model(&m.model).unwrap();
    let test = load_dataset(&m.test).unwrap();
    assert_eq!(count_adversarial(&model, &[], &test).unwrap().total, 0);

    // identity "mutations": each seed copied unchanged
    let corpus: Vec<(ProvenanceEntry, Tensor)> = (0..test.len())
        .map(|i| {
            let e = ProvenanceEntry {
                id: test.len() + i,
                batch: 0,
                parent: i,
                root_seed: i,
                label: test.label(i),
                actions: vec![],
            };
            (e, test.samples[i].clone())
        })
        .collect();
    let s = count_adversarial(&model, &corpus, &test).unwrap();
    assert_eq!(s.count, 0);
    assert_eq!(s.total, test.len());

    // a copy of seed j stored under seed i's label: flips only where the
    // model was right on i and predicts j differently from label i
    let preds: Vec<usize> = model.forward_batch(&test.samples).unwrap().iter().map(|r| r.predicted_label).collect();
    let shifted: Vec<(ProvenanceEntry, Tensor)> = corpus
        .iter()
        .map(|(e, _)| {
            let j = (e.root_seed + 1) % test.len();
            (e.clone(), test.samples[j].clone())
        })
        .collect();
    let want = (0..test.len())
        .filter(|&i| preds[i] == test.label(i).unwrap() as usize && preds[(i + 1) % test.len()] != preds[i])
        .count();
    let s = count_adversarial(&model, &shifted, &test).unwrap();
    assert_eq!(s.count, want);
    assert!((s.percent - 100.0 * want as f64 / test.len() as f64).abs() < 1e-12);
}

#[test]
fn repeat_writes_one_directory_per_seed_and_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let out = dir.path().join("rep");
    let cfg = config(&m, &out, serde_json::json!({"criterion": {"kind": "nbc"}, "termination": {"max_batches": 1}, "seed": 3}));
    let s = run_repeated(&cfg, Arm::Random, 2).unwrap();
    assert_eq!(s.runs.len(), 2);
    assert_eq!(s.runs[1].seed, 4);
    assert!(out.join("summary.json").is_file());
    assert_eq!(load_report(out.join("run_1")).unwrap().fingerprint.seed, 4);
}

#[test]
fn missing_profile_data_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = fixture(dir.path());
    let mut cfg = config(&m, &dir.path().join("x"), serde_json::json!({}));
    cfg.train = dir.path().join("nope.tds");
    assert!(Campaign::load(cfg).is_err());
    let mut cfg = config(&m, &dir.path().join("x"), serde_json::json!({"termination": {}}));
    cfg.search = SearchBudget::default();
    assert!(Campaign::load(cfg).is_err());
}
