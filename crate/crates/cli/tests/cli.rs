use pct_core::evaluation::pck;
use pct_core::posedata::{load_jsonl, load_pose_records};
use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set", "data.n_train=120",
    "--set", "data.n_val=0",
    "--set", "data.n_test=30",
    "--set", "tokenizer_train.epochs=1",
    "--set", "estimator_train.epochs=1",
    "--out", "o",
];

fn pct(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pct"))
        .current_dir(dir)
        .args(args)
        .args(SMALL)
        .output()
        .expect("run pct")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = pct(dir, args);
    assert!(out.status.success(), "pct {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// The single JSON line a failing command prints on stderr.
fn failure(dir: &Path, args: &[&str]) -> Value {
    let out = pct(dir, args);
    assert!(!out.status.success(), "pct {args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    let v: Value = serde_json::from_str(err.trim_end()).unwrap();
    assert!(v["message"].is_string());
    v
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [a.path(), b.path()] {
        ok(d, &["gen-data", "--seed", "7", "--n", "1000"]);
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join("o").join(f)).unwrap();
    assert_eq!(read(a.path(), "data.jsonl"), read(b.path(), "data.jsonl"));
    assert_eq!(read(a.path(), "manifest.gen-data.json"), read(b.path(), "manifest.gen-data.json"));
    let data = load_jsonl(&a.path().join("o/data.jsonl")).unwrap();
    assert_eq!((data.train.len(), data.test.len()), (1000, 30));
}

#[test]
fn encode_decode_matches_eval_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--seed", "3"]);
    ok(d, &["train-tokenizer", "--data", "o/data.jsonl"]);
    ok(d, &["encode", "--data", "o/data.jsonl", "--tokenizer", "o/tokenizer.pctc"]);
    ok(d, &["decode", "--tokenizer", "o/tokenizer.pctc", "--tokens", "o/tokens.jsonl"]);
    ok(d, &["eval", "--data", "o/data.jsonl", "--tokenizer", "o/tokenizer.pctc"]);

    let data = load_jsonl(&d.join("o/data.jsonl")).unwrap();
    let decoded = load_pose_records(&d.join("o/decoded.jsonl"), 16, 2).unwrap();
    let metrics: Value = serde_json::from_slice(&std::fs::read(d.join("o/metrics.json")).unwrap()).unwrap();
    for pair in metrics["reconstruction"]["pck"].as_array().unwrap() {
        let (t, reported) = (pair[0].as_f64().unwrap(), pair[1].as_f64().unwrap());
        let ours = pck(&decoded, &data.test, t, None).unwrap();
        assert!((ours - reported).abs() <= 1e-12, "t={t}: {ours} vs {reported}");
    }

    ok(d, &["eval", "--data", "o/data.jsonl", "--predictions", "o/decoded.jsonl"]);
    let again: Value = serde_json::from_slice(&std::fs::read(d.join("o/metrics.json")).unwrap()).unwrap();
    assert_eq!(again["predictions"]["pck"], metrics["reconstruction"]["pck"]);
}

#[test]
fn errors_are_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let v = failure(d, &["encode", "--data", "o/none.jsonl", "--tokenizer", "o/none.pctc"]);
    assert_eq!(v["error"], "io");

    std::fs::create_dir_all(d.join("o")).unwrap();
    std::fs::write(d.join("o/bad.jsonl"), "{\"k\":16\n").unwrap();
    let v = failure(d, &["train-tokenizer", "--data", "o/bad.jsonl"]);
    assert_eq!(v["error"], "parse");

    let v = failure(d, &["gen-data", "--set", "tokenizer.bogus=1"]);
    assert_eq!(v["error"], "config");
    let v = failure(d, &["gen-data", "--set", "tokenizer.dim=3"]);
    assert_eq!(v["error"], "config");
    let v = failure(d, &["sweep", "--param", "depth", "--values", "1"]);
    assert_eq!(v["error"], "config");
}

#[test]
fn estimator_with_another_tokenizer_is_a_hash_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--seed", "1"]);
    ok(d, &["train-tokenizer", "--data", "o/data.jsonl"]);
    ok(d, &["train-estimator", "--data", "o/data.jsonl", "--tokenizer", "o/tokenizer.pctc"]);
    std::fs::rename(d.join("o/tokenizer.pctc"), d.join("o/first.pctc")).unwrap();
    std::fs::rename(d.join("o/tokenizer.pctc.json"), d.join("o/first.pctc.json")).unwrap();
    ok(d, &["train-tokenizer", "--data", "o/data.jsonl", "--seed", "2"]);
    let v = failure(
        d,
        &["predict", "--data", "o/data.jsonl", "--estimator", "o/estimator.pctc", "--tokenizer", "o/tokenizer.pctc"],
    );
    assert_eq!(v["error"], "hash_mismatch");
    ok(d, &["predict", "--data", "o/data.jsonl", "--estimator", "o/estimator.pctc", "--tokenizer", "o/first.pctc"]);
}

#[test]
fn help_documents_every_flag() {
    let out = Command::new(env!("CARGO_BIN_EXE_pct")).arg("--help").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for word in [
        "--config", "--seed", "--out", "--set", "gen-data", "train-tokenizer", "train-estimator", "encode", "decode",
        "predict", "eval", "analyze-tokens", "ablate", "sweep",
    ] {
        assert!(text.contains(word), "missing {word}");
    }
    let out = Command::new(env!("CARGO_BIN_EXE_pct")).args(["predict", "--help"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for word in ["--estimator", "--tokenizer", "--split", "--mask-rate", "--data"] {
        assert!(text.contains(word), "missing {word}");
    }
}
