//! In-memory versions of the four training steps, evaluation, and the
//! inference benchmark.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::trainer::{fit, predict, DevSet, Phase, Sample, TrainOutcome};
use crate::corpus::{EncodedExample, Example, Vocabulary};
use crate::decode_eval::{best_span, evaluate, EvalReport, Predictions};
use crate::distill::{aggregate_ensemble, annotate_member, DistillConfig, TeacherAnnotation};
use crate::error::{Error, Result};
use crate::reader::{forward, ReaderDims, ReaderParams};

/// Minimum share of in-vocabulary tokens before a corpus is considered
/// mismatched with a model's vocabulary.
pub const MIN_COVERAGE: f64 = 0.5;

/// Drops examples whose passage exceeds `cap` tokens. Returns the kept
/// examples and the number dropped.
pub fn within_cap(examples: Vec<Example>, cap: usize) -> (Vec<Example>, usize) {
    let before = examples.len();
    let kept: Vec<Example> = examples.into_iter().filter(|e| e.passage_len() <= cap).collect();
    let dropped = before - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} examples with passages longer than {cap} tokens");
    }
    (kept, dropped)
}

pub fn build_vocab(train: &[Example], cfg: &TrainConfig) -> Vocabulary {
    Vocabulary::build(train, cfg.vocab_cap)
}

pub fn reader_dims(vocab: &Vocabulary, cfg: &TrainConfig) -> Result<ReaderDims> {
    ReaderDims::new(vocab.len(), cfg.embed_dim, cfg.hidden)
}

/// Fails with the vocabulary hash when too few corpus tokens are known.
pub fn check_vocab(vocab: &Vocabulary, examples: &[Example]) -> Result<()> {
    let coverage = vocab.coverage(examples);
    if coverage < MIN_COVERAGE {
        return Err(Error::VocabMismatch {
            hash: vocab.hash(),
            detail: format!("only {:.1}% of corpus tokens are in the vocabulary", 100.0 * coverage),
        });
    }
    Ok(())
}

fn ensure_labeled(train: &[Example]) -> Result<()> {
    if train.iter().any(|e| !e.is_labeled()) {
        return Err(Error::Data("training corpus contains examples without gold answers".into()));
    }
    Ok(())
}

/// One reader trained with cross-entropy only for `epochs` epochs.
pub fn train_ce(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train: &[Example],
    dev: &DevSet,
    seed: u64,
    epochs: usize,
    label: &str,
) -> Result<TrainOutcome> {
    ensure_labeled(train)?;
    let run_cfg = TrainConfig { seed, ..cfg.clone() };
    let init = ReaderParams::init(reader_dims(vocab, cfg)?, seed);
    let samples: Vec<Sample> = train.iter().map(|e| Sample::labeled(e, vocab)).collect();
    fit(
        init,
        &samples,
        dev,
        &run_cfg,
        &DistillConfig::ce_only(),
        &[(Phase::Full, epochs)],
        label,
    )
}

/// The single-model baseline: cross-entropy only, student epoch budget, base seed.
pub fn train_baseline(cfg: &TrainConfig, vocab: &Vocabulary, train: &[Example], dev: &DevSet) -> Result<TrainOutcome> {
    train_ce(cfg, vocab, train, dev, cfg.seed, cfg.student_epochs, "baseline")
}

/// `ensemble_size` members with seeds `seed + i`, trained in parallel.
pub fn train_teacher_ensemble(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train: &[Example],
    dev: &DevSet,
) -> Result<Vec<TrainOutcome>> {
    cfg.validate()?;
    (0..cfg.distill.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            train_ce(cfg, vocab, train, dev, seed, cfg.teacher_epochs, &format!("teacher {i}"))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Annotated {
    /// Sorted by example id.
    pub records: Vec<TeacherAnnotation>,
    pub dropped: usize,
}

/// Annotates every example with the ensemble. Parallel across examples with
/// an ordered merge; the result does not depend on the thread count.
pub fn annotate(
    members: &[ReaderParams],
    vocab: &Vocabulary,
    examples: &[Example],
    dcfg: &DistillConfig,
    max_passage_len: usize,
) -> Result<Annotated> {
    if members.is_empty() {
        return Err(Error::Config("annotation needs at least one teacher".into()));
    }
    dcfg.validate()?;
    let kept: Vec<&Example> = examples.iter().filter(|e| e.passage_len() <= max_passage_len).collect();
    let dropped = examples.len() - kept.len();
    if dropped > 0 {
        log::warn!("annotation dropped {dropped} examples longer than {max_passage_len} tokens");
    }
    let mut records: Vec<TeacherAnnotation> = kept
        .par_iter()
        .map(|ex| {
            let per: Vec<TeacherAnnotation> = members
                .iter()
                .map(|p| annotate_member(p, vocab, ex, dcfg))
                .collect::<Result<_>>()?;
            aggregate_ensemble(&per)
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    Ok(Annotated { records, dropped })
}

/// Trains the student on the joint objective. `extra` holds augmentation
/// examples, which need annotations but not gold answers.
pub fn train_student(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train: &[Example],
    extra: &[Example],
    records: &[TeacherAnnotation],
    dev: &DevSet,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure_labeled(train)?;
    let dcfg = &cfg.distill;
    let by_id: HashMap<&str, &TeacherAnnotation> = records.iter().map(|r| (r.example_id.as_str(), r)).collect();
    if dcfg.any_distillation() {
        if let Some(r) = records.iter().find(|r| r.tau != dcfg.tau) {
            return Err(Error::Config(format!(
                "distilled records were made at tau {} but the configuration asks for tau {}",
                r.tau, dcfg.tau
            )));
        }
    }
    let mut samples = Vec::with_capacity(train.len() + extra.len());
    for (ex, augmented) in train.iter().map(|e| (e, false)).chain(extra.iter().map(|e| (e, true))) {
        let annotation = by_id.get(ex.id.as_str()).copied();
        if let Some(a) = annotation {
            if a.passage_len() != ex.passage_len() || a.question_len() != ex.question_len() {
                return Err(Error::Data(format!(
                    "annotation for {} does not match the example's token counts",
                    ex.id
                )));
            }
        }
        if dcfg.any_distillation() && annotation.is_none() {
            return Err(Error::Data(format!("no distilled record for example {}", ex.id)));
        }
        if augmented && !dcfg.any_distillation() {
            continue;
        }
        let hard_labels = ex.is_labeled() && !(augmented && cfg.augment_soft_only);
        samples.push(Sample {
            example: ex,
            encoded: vocab.encode(ex),
            annotation: if dcfg.any_distillation() { annotation } else { None },
            hard_labels,
        });
    }
    let mut schedule = Vec::new();
    if dcfg.stagewise && dcfg.warmup_epochs > 0 {
        schedule.push((Phase::Warmup, dcfg.warmup_epochs));
    }
    schedule.push((Phase::Full, cfg.student_epochs));
    let init = ReaderParams::init(reader_dims(vocab, cfg)?, cfg.seed);
    fit(init, &samples, dev, cfg, dcfg, &schedule, "student")
}

/// Predictions and metrics of one reader.
pub fn eval_params(
    params: &ReaderParams,
    vocab: &Vocabulary,
    examples: &[Example],
    max_span_len: usize,
) -> Result<(Predictions, EvalReport)> {
    check_vocab(vocab, examples)?;
    let encoded: Vec<EncodedExample> = examples.iter().map(|e| vocab.encode(e)).collect();
    let preds = predict(params, examples, &encoded, max_span_len)?;
    let report = evaluate(&preds, examples);
    Ok((preds, report))
}

fn ensemble_answer(members: &[ReaderParams], ex: &Example, enc: &EncodedExample, max_span_len: usize) -> Result<String> {
    let m = enc.passage.len();
    let (mut p1, mut p2) = (vec![0.0; m], vec![0.0; m]);
    for params in members {
        let o = forward(params, enc, 1.0)?;
        for (a, x) in p1.iter_mut().zip(&o.start_dist) {
            *a += x;
        }
        for (a, x) in p2.iter_mut().zip(&o.end_dist) {
            *a += x;
        }
    }
    let n = members.len() as f64;
    p1.iter_mut().chain(p2.iter_mut()).for_each(|x| *x /= n);
    Ok(best_span(ex, &p1, &p2, max_span_len).map_or_else(String::new, |s| s.text))
}

/// Ensemble predictions from averaged member distributions, members run in sequence.
pub fn ensemble_predict(
    members: &[ReaderParams],
    vocab: &Vocabulary,
    examples: &[Example],
    max_span_len: usize,
) -> Result<Predictions> {
    let mut out = Predictions::new();
    for ex in examples {
        let enc = vocab.encode(ex);
        out.insert(ex.id.clone(), ensemble_answer(members, ex, &enc, max_span_len)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub members: usize,
    pub repetitions: usize,
    pub examples: usize,
    pub student_seconds: Vec<f64>,
    pub ensemble_seconds: Vec<f64>,
    pub student_median: f64,
    pub ensemble_median: f64,
    /// `ensemble_median / student_median`
    pub ratio: f64,
    pub student_params: usize,
    pub member_params: Vec<usize>,
    pub ensemble_params: usize,
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times full-corpus inference of the student and of the ensemble on the
/// calling thread. One untimed warm-up pass precedes the timed repetitions,
/// which alternate between the two models.
pub fn bench(
    student: &ReaderParams,
    members: &[ReaderParams],
    vocab: &Vocabulary,
    examples: &[Example],
    repetitions: usize,
    max_span_len: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!("bench needs at least 3 repetitions, got {repetitions}")));
    }
    if members.is_empty() {
        return Err(Error::Config("bench needs at least one ensemble member".into()));
    }
    let encoded: Vec<EncodedExample> = examples.iter().map(|e| vocab.encode(e)).collect();
    let single = std::slice::from_ref(student);
    let pass = |models: &[ReaderParams]| -> Result<f64> {
        let t = Instant::now();
        for (ex, enc) in examples.iter().zip(&encoded) {
            std::hint::black_box(ensemble_answer(models, ex, enc, max_span_len)?);
        }
        Ok(t.elapsed().as_secs_f64())
    };
    pass(single)?;
    pass(members)?;
    let (mut s, mut e) = (Vec::with_capacity(repetitions), Vec::with_capacity(repetitions));
    for _ in 0..repetitions {
        s.push(pass(single)?);
        e.push(pass(members)?);
    }
    let (sm, em) = (median(&s), median(&e));
    let member_params: Vec<usize> = members.iter().map(ReaderParams::parameter_count).collect();
    Ok(BenchReport {
        members: members.len(),
        repetitions,
        examples: examples.len(),
        student_seconds: s,
        ensemble_seconds: e,
        student_median: sm,
        ensemble_median: em,
        ratio: em / sm,
        student_params: student.parameter_count(),
        ensemble_params: member_params.iter().sum(),
        member_params,
    })
}
