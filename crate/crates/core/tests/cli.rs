//! End-to-end runs of the command-line tool.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_active-perception"))
}

fn run(args: &[&str], dir: &Path) -> std::process::Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn estimation_bench_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "bench",
            "--suite",
            "estimation",
            "--objects",
            "cyl-4fold,peg-asym",
            "--trials",
            "4",
            "--seed",
            "11",
            "--out",
            out,
        ]
    };
    run(&args("a"), dir.path());
    run(&args("b"), dir.path());
    let a = std::fs::read(dir.path().join("a/estimation_trials.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/estimation_trials.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 4 * 3 * 4);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("a/estimation_report.json")).unwrap()).unwrap();
    assert_eq!(report["master_seed"], 11);
    assert!(report["config"]["nbv"]["tau"].is_number());
    assert!(report["invariants"]
        .as_array()
        .unwrap()
        .iter()
        .all(|c| c["passed"] == true));
}

#[test]
fn tracking_bench_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "bench",
            "--suite",
            "tracking",
            "--methods",
            "pose-servo,world-camera",
            "--scenarios",
            "linear",
            "--trials",
            "2",
            "--out",
            "t",
        ],
        dir.path(),
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("world_camera"));
    let csv = std::fs::read_to_string(dir.path().join("t/tracking_trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}

#[test]
fn config_file_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[nbv]\ntau = 1.0\n").unwrap();
    let out = run(
        &[
            "estimate",
            "--object",
            "cyl-4fold",
            "--config",
            "c.toml",
            "--zero-noise",
        ],
        dir.path(),
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["result"]["moved"], false);

    let out = run(
        &[
            "estimate",
            "--object",
            "cyl-4fold",
            "--zero-noise",
            "--scores-csv",
            "s.csv",
        ],
        dir.path(),
    );
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["result"]["moved"], true);
    assert_eq!(
        doc["result"]["final_estimate"]["hypotheses"].as_array().unwrap().len(),
        1
    );
    let table = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 12);
}

#[test]
fn prompt_export_dataset_train_and_track() {
    let dir = tempfile::tempdir().unwrap();
    run(
        &["prompt", "export", "--object", "ring-cont", "--out", "p.json"],
        dir.path(),
    );
    let prompt: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(prompt["object_name"], "ring-cont");

    std::fs::write(
        dir.path().join("c.toml"),
        "[train]\nepochs = 3\nhidden_width = 16\n[tracking]\ndemos = 2\n",
    )
    .unwrap();
    run(&["dataset", "--config", "c.toml", "--out", "d.jsonl"], dir.path());
    let lines = std::fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 400);
    run(
        &["train", "--config", "c.toml", "--dataset", "d.jsonl", "--out", "m.json"],
        dir.path(),
    );
    run(
        &[
            "track",
            "--config",
            "c.toml",
            "--checkpoint",
            "m.json",
            "--frames-csv",
            "f.csv",
            "--out",
            "r.json",
        ],
        dir.path(),
    );
    let run_doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(run_doc["planner_calls"], 40);
    let frames = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    assert_eq!(frames.lines().count(), 201);
}

#[test]
fn bad_arguments_fail() {
    let out = bin().args(["bench", "--suite", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["track", "--method", "diffusion"]).output().unwrap();
    assert!(!out.status.success());
}
