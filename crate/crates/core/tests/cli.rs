//! End-to-end runs of the installed binary: synth -> prepare ->
//! pretrain -> train-rl -> evaluate, plus exit-code and determinism
//! contracts.

use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathlp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &std::path::Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// One tiny synthetic dataset with a pretrained predictor and an
/// answer-search policy, shared read-only by every test.
struct Fixture {
    _keep: tempfile::TempDir,
    data: PathBuf,
    predictor: PathBuf,
    policy: PathBuf,
    model_cfg: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let keep = tempfile::tempdir().unwrap();
        let root = keep.path();

        let data = root.join("data");
        run_ok(&[
            "synth",
            "--out",
            data.to_str().unwrap(),
            "--entities",
            "20",
            "--rule-facts",
            "15",
            "--seed",
            "5",
        ]);

        let model_cfg = root.join("model.cfg");
        std::fs::write(
            &model_cfg,
            "variant = coke\nd = 16\nlayers = 1\nheads = 2\n\
             epochs = 1\nbatch_size = 32\nchains_per_triple = 1\nsteps = 2\n",
        )
        .unwrap();

        let pre = root.join("pretrain");
        run_ok(&[
            "pretrain",
            "--config",
            model_cfg.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            pre.to_str().unwrap(),
            "--seed",
            "11",
        ]);

        let rl = root.join("rl");
        run_ok(&[
            "train-rl",
            "--data",
            data.to_str().unwrap(),
            "--out",
            rl.to_str().unwrap(),
            "--reward",
            "answer",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--rollouts",
            "4",
            "--N",
            "2",
            "--seed",
            "11",
        ]);

        Fixture {
            data,
            predictor: pre.join("predictor.ckpt"),
            policy: rl.join("policy.ckpt"),
            model_cfg,
            _keep: keep,
        }
    })
}

#[test]
fn prepare_writes_the_vocabulary_manifest() {
    let fix = fixture();
    let out = tempfile::tempdir().unwrap();
    run_ok(&[
        "prepare",
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
    ]);

    let summary = read_json(&out.path().join("summary.json"));
    assert_eq!(summary["entities"], 20);
    let manifest = std::fs::read_to_string(out.path().join("vocab.tsv")).unwrap();
    assert_eq!(manifest.lines().count() as u64, summary["tokens"].as_u64().unwrap());
    assert!(manifest.lines().all(|l| l.split('\t').count() == 3));
    // Augmentation doubles each split.
    assert_eq!(
        summary["train"].as_u64().unwrap() % 2,
        0,
        "augmented split sizes are even"
    );
}

#[test]
fn evaluation_reports_metrics_that_match_its_own_records() {
    let fix = fixture();
    let out = tempfile::tempdir().unwrap();
    run_ok(&[
        "evaluate",
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--strategy",
        "sampling",
        "--predictor",
        fix.predictor.to_str().unwrap(),
        "--N",
        "2",
        "--seed",
        "3",
    ]);

    let summary = read_json(&out.path().join("summary.json"));
    assert_eq!(summary["strategy"], "sampling");
    let records = std::fs::read_to_string(out.path().join("records.jsonl")).unwrap();
    let ranks: Vec<u64> = records
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["rank"].as_u64().unwrap())
        .collect();
    assert_eq!(ranks.len() as u64, summary["queries"].as_u64().unwrap());
    assert!(!ranks.is_empty());

    let mrr: f64 = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64;
    assert!((mrr - summary["mrr"].as_f64().unwrap()).abs() < 1e-12);
    let hit1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / ranks.len() as f64;
    assert!((hit1 - summary["hits"]["1"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn answer_search_evaluation_needs_only_the_policy() {
    let fix = fixture();
    let out = tempfile::tempdir().unwrap();
    run_ok(&[
        "evaluate",
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--strategy",
        "answer-search",
        "--policy",
        fix.policy.to_str().unwrap(),
        "--N",
        "2",
        "--beam-width",
        "10",
    ]);
    let summary = read_json(&out.path().join("summary.json"));
    assert_eq!(summary["strategy"], "answer-search");
    assert!(summary["mrr"].as_f64().unwrap() > 0.0);
}

#[test]
fn zero_epoch_pretraining_succeeds_without_updates() {
    let fix = fixture();
    let out = tempfile::tempdir().unwrap();
    run_ok(&[
        "pretrain",
        "--config",
        fix.model_cfg.to_str().unwrap(),
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--epochs",
        "0",
    ]);
    assert!(out.path().join("predictor.ckpt").exists());
    let curve = std::fs::read_to_string(out.path().join("pretrain_curve.jsonl")).unwrap();
    assert!(curve.is_empty());
    let summary = read_json(&out.path().join("summary.json"));
    assert_eq!(summary["updates"], 0);
}

#[test]
fn equal_seeds_give_byte_identical_artifacts() {
    let fix = fixture();
    let evaluate = |dir: &std::path::Path| {
        run_ok(&[
            "evaluate",
            "--data",
            fix.data.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--strategy",
            "sampling",
            "--predictor",
            fix.predictor.to_str().unwrap(),
            "--N",
            "2",
            "--seed",
            "7",
        ]);
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    evaluate(a.path());
    evaluate(b.path());
    for name in ["records.jsonl", "summary.json"] {
        let left = std::fs::read(a.path().join(name)).unwrap();
        let right = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical runs");
    }

    let pretrain = |dir: &std::path::Path| {
        run_ok(&[
            "pretrain",
            "--config",
            fix.model_cfg.to_str().unwrap(),
            "--data",
            fix.data.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "23",
        ]);
    };
    let c = tempfile::tempdir().unwrap();
    let d = tempfile::tempdir().unwrap();
    pretrain(c.path());
    pretrain(d.path());
    let left = std::fs::read(c.path().join("predictor.ckpt")).unwrap();
    let right = std::fs::read(d.path().join("predictor.ckpt")).unwrap();
    assert_eq!(left, right, "checkpoints differ between identical runs");
}

#[test]
fn usage_errors_exit_with_code_two() {
    let unknown = run(&["frobnicate"]);
    assert_eq!(unknown.status.code(), Some(2));
    let bad_flag = run(&["evaluate", "--bogus"]);
    assert_eq!(bad_flag.status.code(), Some(2));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn missing_checkpoints_are_diagnosed_not_crashed() {
    let fix = fixture();
    let out = tempfile::tempdir().unwrap();
    let res = run(&[
        "evaluate",
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--strategy",
        "rl",
        "--predictor",
        fix.predictor.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--policy"));

    let res = run(&[
        "train-rl",
        "--data",
        fix.data.to_str().unwrap(),
        "--out",
        out.path().to_str().unwrap(),
        "--reward",
        "predictor",
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--predictor"));
}
