//! File-based steps. Each step reads only files written by earlier steps and
//! records itself in `manifest.json` inside its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::TrainConfig;
use super::manifest::{ManifestEntry, RunManifest};
use super::trainer::{DevSet, TrainOutcome};
use super::workflow::{
    annotate, bench, build_vocab, check_vocab, eval_params, train_student, train_teacher_ensemble, within_cap,
    BenchReport,
};
use crate::corpus::{generate_synthetic, load_squad_json_with_report, write_squad_json, Example, SynthSpec, Vocabulary};
use crate::decode_eval::{write_predictions, EvalReport, QUESTION_TYPES};
use crate::distill::{read_distilled, write_distilled};
use crate::error::{Error, Result};
use crate::reader::{Checkpoint, ReaderParams};

pub const MANIFEST: &str = "manifest.json";

fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join(MANIFEST)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Loads a corpus and drops passages longer than the configured cap.
pub fn load_corpus(path: &Path, cfg: &TrainConfig) -> Result<Vec<Example>> {
    let (examples, _) = load_squad_json_with_report(path)?;
    Ok(within_cap(examples, cfg.max_passage_len).0)
}

fn load_dev(path: Option<&Path>, cfg: &TrainConfig, vocab: &Vocabulary) -> Result<DevSet> {
    match path {
        Some(p) => Ok(DevSet::new(load_corpus(p, cfg)?, vocab)),
        None => Ok(DevSet::default()),
    }
}

/// Writes a synthetic corpus; returns the example count.
pub fn step_gen(spec: &SynthSpec, out: &Path) -> Result<usize> {
    let examples = generate_synthetic(spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_squad_json(out, &examples)?;
    Ok(examples.len())
}

fn save_checkpoint(path: &Path, outcome: &TrainOutcome, vocab: &Vocabulary, meta: serde_json::Value) -> Result<()> {
    Checkpoint {
        params: outcome.params.clone(),
        vocab: vocab.clone(),
        meta,
    }
    .save(path)
}

pub fn teacher_path(out_dir: &Path, member: usize) -> PathBuf {
    out_dir.join(format!("teacher-{member}.ckpt"))
}

/// Trains the ensemble and writes `teacher-<i>.ckpt` for each member.
pub fn step_train_teacher(cfg: &TrainConfig, train: &Path, dev: Option<&Path>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let started = Instant::now();
    let examples = load_corpus(train, cfg)?;
    let vocab = build_vocab(&examples, cfg);
    let dev_set = load_dev(dev, cfg, &vocab)?;
    let members = train_teacher_ensemble(cfg, &vocab, &examples, &dev_set)?;

    let mut entry = ManifestEntry::new("train-teacher");
    entry.config = Some(cfg.to_text());
    entry.input(train)?;
    if let Some(d) = dev {
        entry.input(d)?;
    }
    let mut paths = Vec::new();
    for (i, m) in members.iter().enumerate() {
        let path = teacher_path(out_dir, i);
        let meta = serde_json::json!({
            "role": "teacher",
            "member": i,
            "seed": cfg.seed.wrapping_add(i as u64),
            "best_epoch": m.best_epoch,
        });
        save_checkpoint(&path, m, &vocab, meta)?;
        entry.outputs.push(path.display().to_string());
        entry.history.insert(format!("teacher-{i}"), m.history.clone());
        paths.push(path);
    }
    entry.metrics = serde_json::json!({ "vocab_hash": vocab.hash(), "vocab_size": vocab.len() });
    entry.seconds = started.elapsed().as_secs_f64();
    RunManifest::append(&manifest_path(out_dir), entry)?;
    Ok(paths)
}

/// Loads checkpoints that must share one vocabulary.
pub fn load_ensemble(paths: &[PathBuf]) -> Result<(Vec<ReaderParams>, Vocabulary)> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Config("no teacher checkpoints given".into()))?;
    let head = Checkpoint::load(first)?;
    let vocab = head.vocab;
    let mut params = vec![head.params];
    for p in &paths[1..] {
        let ck = Checkpoint::load(p)?;
        if ck.vocab.hash() != vocab.hash() {
            return Err(Error::VocabMismatch {
                hash: ck.vocab.hash(),
                detail: format!("{} uses a different vocabulary than {}", p.display(), first.display()),
            });
        }
        params.push(ck.params);
    }
    Ok((params, vocab))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotateSummary {
    pub records: usize,
    pub dropped: usize,
}

/// Annotates the training corpus (and optional augmentation corpus) with the
/// ensemble and writes the distilled dataset.
pub fn step_annotate(
    cfg: &TrainConfig,
    train: &Path,
    extra: Option<&Path>,
    teachers: &[PathBuf],
    out: &Path,
) -> Result<AnnotateSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let (members, vocab) = load_ensemble(teachers)?;
    let mut examples = load_squad_json_with_report(train)?.0;
    if let Some(x) = extra {
        examples.extend(load_squad_json_with_report(x)?.0);
    }
    check_vocab(&vocab, &examples)?;
    let ann = annotate(&members, &vocab, &examples, &cfg.distill, cfg.max_passage_len)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_distilled(out, &ann.records)?;

    let mut entry = ManifestEntry::new("annotate");
    entry.config = Some(cfg.to_text());
    entry.input(train)?;
    if let Some(x) = extra {
        entry.input(x)?;
    }
    for t in teachers {
        entry.input(t)?;
    }
    entry.outputs.push(out.display().to_string());
    entry.metrics = serde_json::json!({ "records": ann.records.len(), "dropped": ann.dropped });
    entry.seconds = started.elapsed().as_secs_f64();
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    RunManifest::append(&manifest_path(dir), entry)?;
    Ok(AnnotateSummary {
        records: ann.records.len(),
        dropped: ann.dropped,
    })
}

pub fn student_path(out_dir: &Path) -> PathBuf {
    out_dir.join("student.ckpt")
}

/// Trains the student from the distilled dataset; writes `student.ckpt`.
pub fn step_train_student(
    cfg: &TrainConfig,
    train: &Path,
    extra: Option<&Path>,
    distilled: &Path,
    dev: Option<&Path>,
    out_dir: &Path,
) -> Result<PathBuf> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let started = Instant::now();
    let examples = load_corpus(train, cfg)?;
    let extra_examples = match extra {
        Some(x) => load_corpus(x, cfg)?,
        None => Vec::new(),
    };
    let records = read_distilled(distilled)?;
    let vocab = build_vocab(&examples, cfg);
    let dev_set = load_dev(dev, cfg, &vocab)?;
    let outcome = train_student(cfg, &vocab, &examples, &extra_examples, &records, &dev_set)?;
    let path = student_path(out_dir);
    let meta = serde_json::json!({ "role": "student", "seed": cfg.seed, "best_epoch": outcome.best_epoch });
    save_checkpoint(&path, &outcome, &vocab, meta)?;

    let mut entry = ManifestEntry::new("train-student");
    entry.config = Some(cfg.to_text());
    entry.input(train)?;
    if let Some(x) = extra {
        entry.input(x)?;
    }
    entry.input(distilled)?;
    if let Some(d) = dev {
        entry.input(d)?;
    }
    entry.outputs.push(path.display().to_string());
    entry.history.insert("student".into(), outcome.history);
    entry.metrics = serde_json::json!({ "best_epoch": outcome.best_epoch, "vocab_hash": vocab.hash() });
    entry.seconds = started.elapsed().as_secs_f64();
    RunManifest::append(&manifest_path(out_dir), entry)?;
    Ok(path)
}

/// Human-readable metrics table.
pub fn render_report(report: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "examples     {}", report.count);
    let _ = writeln!(s, "adversarial  {}", report.adversarial_count);
    let _ = writeln!(s, "missing      {}", report.missing);
    let _ = writeln!(s, "EM           {:.2}", report.em);
    let _ = writeln!(s, "F1           {:.2}", report.f1);
    let _ = writeln!(s, "\n{:<8} {:>7} {:>7} {:>7}", "type", "count", "EM", "F1");
    for t in QUESTION_TYPES {
        if let Some(b) = report.per_type.get(t) {
            let _ = writeln!(s, "{t:<8} {:>7} {:>7.2} {:>7.2}", b.count, b.em, b.f1);
        }
    }
    s
}

/// Evaluates a checkpoint on a corpus. Writes `<stem>.predictions.json`,
/// `<stem>.report.json`, and `<stem>.report.txt` into `out_dir`.
pub fn step_eval(checkpoint: &Path, corpus: &Path, out_dir: &Path, max_span_len: usize) -> Result<EvalReport> {
    ensure_dir(out_dir)?;
    let started = Instant::now();
    let ck = Checkpoint::load(checkpoint)?;
    let examples = load_squad_json_with_report(corpus)?.0;
    let (preds, report) = eval_params(&ck.params, &ck.vocab, &examples, max_span_len)?;
    let stem = corpus.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    let pred_path = out_dir.join(format!("{stem}.predictions.json"));
    let json_path = out_dir.join(format!("{stem}.report.json"));
    let text_path = out_dir.join(format!("{stem}.report.txt"));
    write_predictions(&pred_path, &preds)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&text_path, render_report(&report)).map_err(|e| Error::io(&text_path, e))?;

    let mut entry = ManifestEntry::new("eval");
    entry.input(checkpoint)?;
    entry.input(corpus)?;
    entry.outputs = vec![pred_path, json_path, text_path]
        .into_iter()
        .map(|p| p.display().to_string())
        .collect();
    entry.metrics = to_json(&report);
    entry.seconds = started.elapsed().as_secs_f64();
    RunManifest::append(&manifest_path(out_dir), entry)?;
    Ok(report)
}

/// Times the student against the ensemble on a corpus.
pub fn step_bench(
    student: &Path,
    teachers: &[PathBuf],
    corpus: &Path,
    repetitions: usize,
    max_span_len: usize,
) -> Result<BenchReport> {
    let ck = Checkpoint::load(student)?;
    let (members, vocab) = load_ensemble(teachers)?;
    if vocab.hash() != ck.vocab.hash() {
        return Err(Error::VocabMismatch {
            hash: ck.vocab.hash(),
            detail: "student and teachers use different vocabularies".into(),
        });
    }
    let examples = load_squad_json_with_report(corpus)?.0;
    check_vocab(&vocab, &examples)?;
    bench(&ck.params, &members, &vocab, &examples, repetitions, max_span_len)
}
