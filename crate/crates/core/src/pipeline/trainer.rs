//! Minibatch training of one reader with adaptive-moment updates.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::corpus::{EncodedExample, Example, Vocabulary};
use crate::decode_eval::{best_span, evaluate, EvalReport, Predictions};
use crate::distill::{joint_graph, loss_ans, loss_att, loss_ce, loss_kd, DistillConfig, LossTerms, TeacherAnnotation};
use crate::error::{Error, Result};
use crate::numerics::Tape;
use crate::reader::{bind, forward, forward_graph, ReaderParams};

/// One training example with its optional teacher annotation.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub example: &'a Example,
    pub encoded: EncodedExample,
    pub annotation: Option<&'a TeacherAnnotation>,
    /// Whether gold spans feed the cross-entropy and margin terms.
    pub hard_labels: bool,
}

impl<'a> Sample<'a> {
    pub fn labeled(example: &'a Example, vocab: &Vocabulary) -> Self {
        Self {
            example,
            encoded: vocab.encode(example),
            annotation: None,
            hard_labels: example.is_labeled(),
        }
    }
}

/// Which objective an epoch optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Attention matching alone (stage-wise warm-up).
    Warmup,
    /// The configured objective.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// Mean per-example loss over the epoch.
    pub loss: f64,
    pub dev_em: Option<f64>,
    pub dev_f1: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ReaderParams,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Encoded dev examples for model selection.
#[derive(Debug, Clone, Default)]
pub struct DevSet {
    pub examples: Vec<Example>,
    pub encoded: Vec<EncodedExample>,
}

impl DevSet {
    pub fn new(examples: Vec<Example>, vocab: &Vocabulary) -> Self {
        let encoded = examples.iter().map(|e| vocab.encode(e)).collect();
        Self { examples, encoded }
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Argmax-span predictions for every example.
pub fn predict(params: &ReaderParams, examples: &[Example], encoded: &[EncodedExample], max_span_len: usize) -> Result<Predictions> {
    let mut out = Predictions::new();
    for (ex, enc) in examples.iter().zip(encoded) {
        let o = forward(params, enc, 1.0)?;
        let text = best_span(ex, &o.start_dist, &o.end_dist, max_span_len).map_or_else(String::new, |s| s.text);
        out.insert(ex.id.clone(), text);
    }
    Ok(out)
}

pub fn evaluate_params(params: &ReaderParams, dev: &DevSet, max_span_len: usize) -> Result<EvalReport> {
    let preds = predict(params, &dev.examples, &dev.encoded, max_span_len)?;
    Ok(evaluate(&preds, &dev.examples))
}

/// Adam state for every parameter array.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ReaderParams, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ReaderParams, grads: &[Vec<f64>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.tensors_mut().iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((x, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *x -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// Loss of one sample and its gradient added into `grads`. `None` when no
/// term applies to the sample in this phase.
pub fn accumulate_sample(
    params: &ReaderParams,
    sample: &Sample<'_>,
    dcfg: &DistillConfig,
    phase: Phase,
    grads: &mut [Vec<f64>],
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let b = bind(&mut tape, params, &sample.encoded, true)?;
    let g = forward_graph(&mut tape, &b.vars, &b.question, &b.passage)?;
    let gold = sample.example.gold_spans.first().copied().filter(|_| sample.hard_labels);
    let ann = sample.annotation;

    let mut terms = LossTerms::default();
    let cfg;
    match phase {
        Phase::Warmup => {
            if let Some(a) = ann {
                terms.att = Some(loss_att(&mut tape, g.attention, &a.attention)?);
            }
            cfg = DistillConfig {
                use_kd: false,
                use_ans: false,
                use_att: true,
                ..dcfg.clone()
            };
        }
        Phase::Full => {
            if let Some(k) = gold {
                terms.ce = Some(loss_ce(&mut tape, g.start_logits, g.end_logits, k)?);
            }
            if let Some(a) = ann {
                if dcfg.use_kd {
                    terms.kd = Some(loss_kd(&mut tape, g.start_logits, g.end_logits, &a.start_soft, &a.end_soft, dcfg.tau)?);
                }
                if dcfg.use_ans {
                    if let (Some(k), Some(c)) = (gold, a.confusing_span()) {
                        terms.ans = Some(loss_ans(&mut tape, g.start_logits, g.end_logits, k, c, dcfg.margin)?);
                    }
                }
                if dcfg.use_att {
                    terms.att = Some(loss_att(&mut tape, g.attention, &a.attention)?);
                }
            }
            cfg = dcfg.clone();
        }
    }
    let active = terms.ce.is_some()
        || (cfg.use_kd && terms.kd.is_some())
        || (cfg.use_ans && terms.ans.is_some())
        || (cfg.use_att && terms.att.is_some());
    if !active {
        return Ok(None);
    }
    let loss = joint_graph(&mut tape, terms, &cfg)?;
    let value = tape.scalar(loss);
    let back = tape.backward(loss)?;

    let emb = back.get(b.vars.0[0]);
    if let Some(local) = emb {
        let d = params.tensors()[0].cols();
        for (li, &row) in b.rows.iter().enumerate() {
            let dst = &mut grads[0][row * d..(row + 1) * d];
            for (x, y) in dst.iter_mut().zip(&local[li * d..(li + 1) * d]) {
                *x += y;
            }
        }
    }
    for (i, v) in b.vars.0.iter().enumerate().skip(1) {
        if let Some(gv) = back.get(*v) {
            for (x, y) in grads[i].iter_mut().zip(gv) {
                *x += y;
            }
        }
    }
    Ok(Some(value))
}

fn as_divergence(e: Error, what: &str) -> Error {
    match e {
        Error::NonFinite(m) => Error::Divergence(format!("{what}: non-finite value in {m}")),
        other => other,
    }
}

/// Trains `params` over the `(phase, epochs)` schedule. With a dev set and
/// `keep_best`, returns the parameters of the best-dev-F1 epoch.
pub fn fit(
    mut params: ReaderParams,
    samples: &[Sample<'_>],
    dev: &DevSet,
    cfg: &TrainConfig,
    dcfg: &DistillConfig,
    schedule: &[(Phase, usize)],
    label: &str,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Data(format!("{label}: no training examples")));
    }
    let mut adam = Adam::new(&params, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ReaderParams)> = None;
    let mut epoch = 0;

    for &(phase, count) in schedule {
        for _ in 0..count {
            epoch += 1;
            let started = Instant::now();
            order.shuffle(&mut rng);
            let (mut total, mut seen) = (0.0, 0usize);
            for batch in order.chunks(cfg.batch_size) {
                grads.iter_mut().for_each(|g| g.fill(0.0));
                let (mut batch_loss, mut n) = (0.0, 0usize);
                for &i in batch {
                    let got = accumulate_sample(&params, &samples[i], dcfg, phase, &mut grads)
                        .map_err(|e| as_divergence(e, label))?;
                    if let Some(l) = got {
                        batch_loss += l;
                        n += 1;
                    }
                }
                if n == 0 {
                    continue;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence(format!("{label}: loss became non-finite in epoch {epoch}")));
                }
                let inv = 1.0 / n as f64;
                grads.iter_mut().flatten().for_each(|g| *g *= inv);
                clip_global_norm(&mut grads, cfg.clip_norm);
                adam.update(&mut params, &grads);
                if !params.is_finite() {
                    return Err(Error::Divergence(format!("{label}: parameters became non-finite in epoch {epoch}")));
                }
                total += batch_loss;
                seen += n;
            }
            let loss = if seen > 0 { total / seen as f64 } else { 0.0 };
            let report = if dev.is_empty() {
                None
            } else {
                Some(evaluate_params(&params, dev, dcfg.max_span_len)?)
            };
            let rec = EpochRecord {
                epoch,
                phase,
                loss,
                dev_em: report.as_ref().map(|r| r.em),
                dev_f1: report.as_ref().map(|r| r.f1),
                seconds: started.elapsed().as_secs_f64(),
            };
            log::info!(
                "{label} epoch {epoch} ({phase:?}): loss {loss:.4}{}",
                rec.dev_f1
                    .map_or_else(String::new, |f| format!(", dev EM {:.2} F1 {f:.2}", rec.dev_em.unwrap_or(0.0)))
            );
            history.push(rec);
            if cfg.keep_best && phase == Phase::Full {
                if let Some(f1) = report.map(|r| r.f1) {
                    if best.as_ref().map_or(true, |b| f1 > b.0) {
                        best = Some((f1, epoch, params.clone()));
                    }
                }
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (params, epoch),
    };
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
    })
}
