use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mrcd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrcd"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mrcd")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = mrcd(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &str = "teacher_epochs = 2\nstudent_epochs = 2\nbatch_size = 8\nembed_dim = 6\nhidden = 6\nensemble_size = 2\n";

#[test]
fn full_procedure_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.cfg"), SMALL).unwrap();
    ok(d, &["gen", "--seed", "4", "--passages", "20", "--out", "train.json"]);
    ok(d, &["gen", "--seed", "5", "--passages", "10", "--adversarial", "--out", "adv.json"]);
    let teachers = ok(d, &["--config", "small.cfg", "--out-dir", "t", "train-teacher", "--train", "train.json"]);
    assert_eq!(teachers.lines().count(), 2);
    ok(
        d,
        &[
            "--config", "small.cfg", "annotate", "--train", "train.json", "--teacher", "t/teacher-0.ckpt",
            "--teacher", "t/teacher-1.ckpt", "--out", "t/distilled.jsonl",
        ],
    );
    ok(
        d,
        &[
            "--config", "small.cfg", "--out-dir", "s", "train-student", "--train", "train.json", "--distilled",
            "t/distilled.jsonl",
        ],
    );
    let report = ok(d, &["--out-dir", "r", "eval", "--checkpoint", "s/student.ckpt", "--corpus", "adv.json"]);
    assert!(report.contains("adversarial  10"), "{report}");
    assert!(d.join("r/adv.predictions.json").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("r/adv.report.json")).unwrap()).unwrap();
    assert_eq!(json["count"], 10);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("t/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 2);

    let bench = ok(
        d,
        &[
            "bench", "--student", "s/student.ckpt", "--teacher", "t/teacher-0.ckpt", "--teacher",
            "t/teacher-1.ckpt", "--corpus", "adv.json",
        ],
    );
    assert!(bench.contains("members          2"), "{bench}");
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(mrcd(d, &["--set", "no_such_key=1", "gradcheck"]).status.code(), Some(2));
    fs::write(d.join("bad.cfg"), "tau = -1\n").unwrap();
    assert_eq!(mrcd(d, &["--config", "bad.cfg", "gradcheck"]).status.code(), Some(2));
    assert_eq!(mrcd(d, &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("broken.json"), "{\"data\": [").unwrap();
    let out = mrcd(d, &["--set", "ensemble_size=1", "train-teacher", "--train", "broken.json"]);
    assert_eq!(out.status.code(), Some(3));
    let out = mrcd(d, &["eval", "--checkpoint", "missing.ckpt", "--corpus", "broken.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn eval_names_the_vocabulary_hash_on_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("small.cfg"), SMALL.replace("ensemble_size = 2", "ensemble_size = 1")).unwrap();
    ok(d, &["gen", "--passages", "10", "--out", "train.json"]);
    ok(d, &["--config", "small.cfg", "train-teacher", "--train", "train.json"]);
    let other = r#"{"version": "1.1", "data": [{"title": "x", "paragraphs": [{"context": "Zyx qwv plo mnb vcx.",
        "qas": [{"id": "q1", "question": "Rtz lkj?", "answers": [{"text": "qwv", "answer_start": 4}]}]}]}]}"#;
    fs::write(d.join("other.json"), other).unwrap();
    let out = mrcd(d, &["eval", "--checkpoint", "teacher-0.ckpt", "--corpus", "other.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocabulary"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["gradcheck", "--tau", "2"]);
    assert_eq!(text.lines().count(), 5);
    assert!(!text.contains("FAIL"), "{text}");
}
