//! Drives the `fuzz` binary end to end against its in-process service.

use std::path::Path;
use std::process::{Command, Output};

fn fuzz(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fuzz"))
        .args(args)
        .env_remove("NNFUZZ_SERVER")
        .output()
        .expect("spawn fuzz");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is json")
}

fn write(path: &Path, v: serde_json::Value) {
    std::fs::write(path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
}

#[test]
fn fixtures_coverage_run_report_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(&d.join("spec.json"), serde_json::json!({"architecture": "micro-cnn", "weight_seed": 4}));
    let out = fuzz(&["fixtures", "--spec", d.join("spec.json").to_str().unwrap(), "--out", d.join("fx").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(json(&out)["parameter_count"].as_u64().unwrap() > 0);
    let model = d.join("fx/micro-cnn.nnwc");
    assert!(model.is_file());

    let out = fuzz(&[
        "coverage",
        "--model",
        model.to_str().unwrap(),
        "--dataset",
        d.join("fx/test.tds").to_str().unwrap(),
        "--criterion",
        "kmn:100",
        "--train",
        d.join("fx/train.tds").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let cov = json(&out);
    assert_eq!(cov["criterion"], "kmn");
    assert!(cov["value"].as_f64().unwrap() > 0.0);

    // relative paths resolve against the config file
    write(
        &d.join("campaign.json"),
        serde_json::json!({
            "model": "fx/micro-cnn.nnwc", "train": "fx/train.tds", "test": "fx/test.tds",
            "output_dir": "out", "criterion": {"kind": "nbc"},
            "chooser": {"batch_size": 16},
            "search": {"max_depth_levels": 4, "iterations_per_root": 8},
            "termination": {"max_batches": 2}
        }),
    );
    let cfg = d.join("campaign.json");
    let out = fuzz(&["run", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert!(out.status.success());
    let run = json(&out);
    assert_eq!(run["kind"], "single");
    assert_eq!(run["report"]["fingerprint"]["seed"], 3);
    assert_eq!(run["report"]["batches_attempted"], 2);

    let out = fuzz(&["report", "--campaign", d.join("out").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(json(&out)["report"], run["report"]);

    let out = fuzz(&["replay", "--campaign", d.join("out").to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(json(&out)["ok"], true);

    let out = fuzz(&["baseline", "--config", cfg.to_str().unwrap(), "--repeat", "2"]);
    assert!(out.status.success());
    let rep = json(&out);
    assert_eq!(rep["kind"], "repeated");
    assert_eq!(rep["summary"]["arm"], "random");
    assert_eq!(rep["summary"]["runs"].as_array().unwrap().len(), 2);
    assert!(d.join("out/run_1/report.json").is_file());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = fuzz(&["report", "--campaign", dir.path().join("missing").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = fuzz(&["coverage", "--model", "m", "--dataset", "d", "--criterion", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_lists_every_subcommand() {
    let out = fuzz(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["serve", "run", "baseline", "coverage", "report", "replay", "fixtures"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    let run = String::from_utf8_lossy(&fuzz(&["run", "--help"]).stdout).into_owned();
    assert!(run.contains("--seed") && run.contains("--repeat") && run.contains("--config"));
}
