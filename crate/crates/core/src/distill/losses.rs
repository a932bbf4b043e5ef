//! The four training losses, on the tape and as plain values.
//!
//! Logit arguments are `[m]` vars; attention arguments are `[m, n]`.

use super::config::DistillConfig;
use crate::corpus::Span;
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_temp, Tape, Tensor, Var};

/// Tolerance on teacher soft-target normalization.
pub const TARGET_SUM_TOL: f64 = 1e-5;

fn check_span(span: Span, m: usize, what: &str) -> Result<()> {
    if span.fits(m) {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{what} span ({}, {}) is outside a passage of {m} tokens",
            span.start, span.end
        )))
    }
}

fn check_target(q: &[f64], m: usize) -> Result<()> {
    if q.len() != m {
        return Err(Error::Shape {
            op: "loss_kd",
            left: vec![m],
            right: vec![q.len()],
        });
    }
    let s: f64 = q.iter().sum();
    if (s - 1.0).abs() > TARGET_SUM_TOL || q.iter().any(|&x| x < 0.0) {
        return Err(Error::Data(format!("teacher distribution sums to {s}, not 1")));
    }
    Ok(())
}

/// `-log p1(k) - log p2(l)`.
pub fn loss_ce(tape: &mut Tape, start: Var, end: Var, gold: Span) -> Result<Var> {
    check_span(gold, tape.value(start).len(), "gold")?;
    let ls = tape.row_log_softmax(start, 1.0, None)?;
    let le = tape.row_log_softmax(end, 1.0, None)?;
    let a = tape.pick(ls, gold.start)?;
    let b = tape.pick(le, gold.end)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Cross-entropy of the student at temperature `tau` against teacher targets
/// already normalized at `tau`. Not yet weighted by lambda.
pub fn loss_kd(tape: &mut Tape, start: Var, end: Var, q1: &[f64], q2: &[f64], tau: f64) -> Result<Var> {
    let m = tape.value(start).len();
    check_target(q1, m)?;
    check_target(q2, m)?;
    let ls = tape.row_log_softmax(start, tau, None)?;
    let le = tape.row_log_softmax(end, tau, None)?;
    let a = tape.dot_const(ls, q1)?;
    let b = tape.dot_const(le, q2)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// `max(0, margin - b1[k] + b1[i]) + max(0, margin - b2[l] + b2[j])`.
pub fn loss_ans(tape: &mut Tape, start: Var, end: Var, gold: Span, confusing: Span, margin: f64) -> Result<Var> {
    if !(margin > 0.0) {
        return Err(Error::Config(format!("margin must be positive, got {margin}")));
    }
    let m = tape.value(start).len();
    check_span(gold, m, "gold")?;
    check_span(confusing, m, "confusing")?;
    let mut hinge = |logits: Var, good: usize, bad: usize| -> Result<Var> {
        let g = tape.pick(logits, good)?;
        let b = tape.pick(logits, bad)?;
        let d = tape.sub(b, g)?;
        let d = tape.offset(d, margin)?;
        tape.hinge(d)
    };
    let a = hinge(start, gold.start, confusing.start)?;
    let b = hinge(end, gold.end, confusing.end)?;
    tape.add(a, b)
}

/// `0.5 * sum (D - E)^2` over every entry.
pub fn loss_att(tape: &mut Tape, student: Var, teacher: &Tensor) -> Result<Var> {
    if tape.value(student).shape() != teacher.shape() {
        return Err(Error::Shape {
            op: "loss_att",
            left: tape.value(student).shape().to_vec(),
            right: teacher.shape().to_vec(),
        });
    }
    let t = tape.constant(teacher.clone());
    let d = tape.sub(student, t)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    tape.scale(s, 0.5)
}

/// Per-example loss components; absent terms are disabled or inapplicable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub ce: Option<T>,
    pub kd: Option<T>,
    pub ans: Option<T>,
    pub att: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        Self {
            ce: None,
            kd: None,
            ans: None,
            att: None,
        }
    }
}

fn check_weights(cfg: &DistillConfig) -> Result<()> {
    for (name, w) in [("lambda", cfg.lambda()), ("gamma", cfg.gamma), ("delta", cfg.delta)] {
        if w < 0.0 || !w.is_finite() {
            return Err(Error::Config(format!("{name} must be non-negative, got {w}")));
        }
    }
    Ok(())
}

/// `L = CE + lambda KD + gamma ANS + delta ATT` on the tape. Disabled switches
/// and absent terms add nothing at all, so a CE-only objective records exactly
/// the same operations as plain cross-entropy training.
pub fn joint_graph(tape: &mut Tape, terms: LossTerms<Var>, cfg: &DistillConfig) -> Result<Var> {
    check_weights(cfg)?;
    let mut parts = Vec::with_capacity(4);
    if let Some(ce) = terms.ce {
        parts.push(ce);
    }
    let weighted = [
        (cfg.use_kd, terms.kd, cfg.lambda()),
        (cfg.use_ans, terms.ans, cfg.gamma),
        (cfg.use_att, terms.att, cfg.delta),
    ];
    for (on, term, w) in weighted {
        if let (true, Some(v)) = (on, term) {
            parts.push(tape.scale(v, w)?);
        }
    }
    if parts.is_empty() {
        return Err(Error::Config("objective has no active terms".into()));
    }
    tape.add_all(&parts)
}

/// Value form of [`joint_graph`].
pub fn loss_joint(terms: LossTerms<f64>, cfg: &DistillConfig) -> Result<f64> {
    check_weights(cfg)?;
    let mut total = terms.ce.unwrap_or(0.0);
    if cfg.use_kd {
        total += cfg.lambda() * terms.kd.unwrap_or(0.0);
    }
    if cfg.use_ans {
        total += cfg.gamma * terms.ans.unwrap_or(0.0);
    }
    if cfg.use_att {
        total += cfg.delta * terms.att.unwrap_or(0.0);
    }
    Ok(total)
}

/// Value form of [`loss_ce`] from logits.
pub fn ce_value(start_logits: &[f64], end_logits: &[f64], gold: Span) -> Result<f64> {
    check_span(gold, start_logits.len().min(end_logits.len()), "gold")?;
    let ls = log_softmax_temp(start_logits, 1.0, None)?;
    let le = log_softmax_temp(end_logits, 1.0, None)?;
    Ok(-ls[gold.start] - le[gold.end])
}

/// Cross-entropy from probabilities: `-log p1(k) - log p2(l)`.
pub fn ce_from_probs(p1: &[f64], p2: &[f64], gold: Span) -> Result<f64> {
    check_span(gold, p1.len().min(p2.len()), "gold")?;
    Ok(-p1[gold.start].ln() - p2[gold.end].ln())
}

/// Value form of [`loss_kd`].
pub fn kd_value(start_logits: &[f64], end_logits: &[f64], q1: &[f64], q2: &[f64], tau: f64) -> Result<f64> {
    check_target(q1, start_logits.len())?;
    check_target(q2, end_logits.len())?;
    let ls = log_softmax_temp(start_logits, tau, None)?;
    let le = log_softmax_temp(end_logits, tau, None)?;
    let dot = |q: &[f64], l: &[f64]| q.iter().zip(l).map(|(a, b)| a * b).sum::<f64>();
    Ok(-dot(q1, &ls) - dot(q2, &le))
}

/// Value form of [`loss_ans`].
pub fn ans_value(start_logits: &[f64], end_logits: &[f64], gold: Span, confusing: Span, margin: f64) -> Result<f64> {
    if !(margin > 0.0) {
        return Err(Error::Config(format!("margin must be positive, got {margin}")));
    }
    let m = start_logits.len();
    check_span(gold, m, "gold")?;
    check_span(confusing, m, "confusing")?;
    let a = (margin - start_logits[gold.start] + start_logits[confusing.start]).max(0.0);
    let b = (margin - end_logits[gold.end] + end_logits[confusing.end]).max(0.0);
    Ok(a + b)
}

/// Value form of [`loss_att`].
pub fn att_value(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::Shape {
            op: "loss_att",
            left: student.shape().to_vec(),
            right: teacher.shape().to_vec(),
        });
    }
    Ok(0.5 * student.data().iter().zip(teacher.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, softmax_temp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::vector(v.to_vec()).unwrap())
    }

    #[test]
    fn ce_examples() {
        let m = 5;
        let flat = vec![0.3; m];
        let v = ce_value(&flat, &flat, Span::new(1, 2)).unwrap();
        assert!((v - 2.0 * (m as f64).ln()).abs() < 1e-12);
        let one_hot = [1.0, 0.0, 0.0];
        assert_eq!(ce_from_probs(&one_hot, &[0.0, 0.0, 1.0], Span::new(0, 2)).unwrap(), 0.0);
        assert!(ce_value(&flat, &flat, Span::new(3, 9)).is_err());
    }

    #[test]
    fn ce_random_four_positions_matches_formula() {
        let b1 = [0.4, -1.2, 2.0, 0.1];
        let b2 = [1.5, 0.0, -0.3, 0.7];
        let lse = |b: &[f64]| b.iter().map(|x| x.exp()).sum::<f64>().ln();
        let expect = -(b1[2] - lse(&b1)) - (b2[3] - lse(&b2));
        let mut tape = Tape::new();
        let (s, e) = (logits(&mut tape, &b1), logits(&mut tape, &b2));
        let l = loss_ce(&mut tape, s, e, Span::new(2, 3)).unwrap();
        assert!((tape.scalar(l) - expect).abs() < 1e-12);
        assert!((ce_value(&b1, &b2, Span::new(2, 3)).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn kd_examples() {
        let m = 4;
        let uniform = vec![1.0 / m as f64; m];
        let zeros = vec![0.0; m];
        let v = kd_value(&zeros, &zeros, &uniform, &uniform, 2.0).unwrap();
        assert!((v - 2.0 * (m as f64).ln()).abs() < 1e-12);

        // One-hot teacher reduces to cross-entropy at temperature tau.
        let b1 = [0.4, -1.2, 2.0, 0.1];
        let b2 = [1.5, 0.0, -0.3, 0.7];
        let tau = 3.0;
        let scaled = |b: &[f64]| b.iter().map(|x| x / tau).collect::<Vec<_>>();
        let q1 = [0.0, 1.0, 0.0, 0.0];
        let q2 = [0.0, 0.0, 0.0, 1.0];
        let kd = kd_value(&b1, &b2, &q1, &q2, tau).unwrap();
        let ce = ce_value(&scaled(&b1), &scaled(&b2), Span::new(1, 3)).unwrap();
        assert!((kd - ce).abs() < 1e-12);

        assert!(matches!(kd_value(&b1, &b2, &[0.5, 0.4, 0.0, 0.0], &q2, 1.0), Err(Error::Data(_))));
        assert!(kd_value(&b1, &b2, &[1.0], &q2, 1.0).is_err());
    }

    #[test]
    fn kd_equals_entropy_when_student_matches() {
        let b = [0.2, 1.0, -0.5, 0.3, 0.0];
        let tau = 2.0;
        let q = softmax_temp(&b, tau, None).unwrap();
        let h: f64 = -q.iter().map(|x| x * x.ln()).sum::<f64>();
        let v = kd_value(&b, &b, &q, &q, tau).unwrap();
        assert!((v - 2.0 * h).abs() < 1e-12);
    }

    #[test]
    fn kd_random_five_positions_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for tau in [1.0, 2.0, 3.0, 5.0] {
            let b1: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b2: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let raw: Vec<f64> = (0..5).map(|_| rng.gen_range(0.1..1.0)).collect();
            let z: f64 = raw.iter().sum();
            let q: Vec<f64> = raw.iter().map(|x| x / z).collect();
            let mut expect = 0.0;
            for (b, qq) in [(&b1, &q), (&b2, &q)] {
                let mut denom = 0.0;
                for x in b.iter() {
                    denom += (x / tau).exp();
                }
                for k in 0..5 {
                    expect -= qq[k] * ((b[k] / tau).exp() / denom).ln();
                }
            }
            let mut tape = Tape::new();
            let (s, e) = (logits(&mut tape, &b1), logits(&mut tape, &b2));
            let l = loss_kd(&mut tape, s, e, &q, &q, tau).unwrap();
            assert!((tape.scalar(l) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ans_examples() {
        let gold = Span::new(0, 1);
        let conf = Span::new(2, 3);
        // b1[k]-b1[i] = 2, b2[l]-b2[j] = 1.5
        let b1 = [2.0, 0.0, 0.0, 0.0];
        let b2 = [0.0, 1.5, 0.0, 0.0];
        assert_eq!(ans_value(&b1, &b2, gold, conf, 1.0).unwrap(), 0.0);
        let eq = [0.0; 4];
        assert_eq!(ans_value(&eq, &eq, gold, conf, 1.0).unwrap(), 2.0);
        let b1 = [0.4, 0.0, 0.0, 0.0];
        let b2 = [0.0, 2.0, 0.0, 0.0];
        assert!((ans_value(&b1, &b2, gold, conf, 1.0).unwrap() - 0.6).abs() < 1e-12);
        let mut tape = Tape::new();
        let (s, e) = (logits(&mut tape, &b1), logits(&mut tape, &b2));
        let l = loss_ans(&mut tape, s, e, gold, conf, 1.0).unwrap();
        assert!((tape.scalar(l) - 0.6).abs() < 1e-12);
        assert!(ans_value(&b1, &b2, gold, Span::new(2, 7), 1.0).is_err());
        assert!(ans_value(&b1, &b2, gold, conf, 0.0).is_err());
    }

    #[test]
    fn ans_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let b1: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b2: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (c1, c2) = (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
            let s1: Vec<f64> = b1.iter().map(|x| x + c1).collect();
            let s2: Vec<f64> = b2.iter().map(|x| x + c2).collect();
            let (g, c) = (Span::new(1, 2), Span::new(4, 5));
            let a = ans_value(&b1, &b2, g, c, 1.0).unwrap();
            let b = ans_value(&s1, &s2, g, c, 1.0).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn att_examples() {
        let d = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let e = Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap();
        assert_eq!(att_value(&e, &d).unwrap(), 1.0);
        assert_eq!(att_value(&d, &d).unwrap(), 0.0);
        assert!(att_value(&d, &Tensor::zeros(vec![2, 1])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let b = Tensor::matrix(3, 4, (0..12).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let mut expect = 0.0;
        for j in 0..3 {
            for i in 0..4 {
                expect += (a.get2(j, i) - b.get2(j, i)).powi(2);
            }
        }
        expect *= 0.5;
        let mut tape = Tape::new();
        let s = tape.leaf(a.clone());
        let l = loss_att(&mut tape, s, &b).unwrap();
        assert!((tape.scalar(l) - expect).abs() < 1e-12);
    }

    #[test]
    fn joint_examples() {
        let cfg = DistillConfig::default();
        let terms = LossTerms {
            ce: Some(1.0),
            kd: Some(0.5),
            ans: Some(2.0),
            att: Some(3.0),
        };
        assert!((loss_joint(terms, &cfg).unwrap() - 3.9).abs() < 1e-12);
        let only_ce = LossTerms {
            ce: Some(1.7),
            kd: Some(0.0),
            ans: Some(0.0),
            att: Some(0.0),
        };
        assert_eq!(loss_joint(only_ce, &cfg).unwrap(), 1.7);
        assert_eq!(loss_joint(terms, &DistillConfig::ce_only()).unwrap(), 1.0);
        let neg = DistillConfig { delta: -1.0, ..cfg };
        assert!(matches!(loss_joint(terms, &neg), Err(Error::Config(_))));
    }

    #[test]
    fn joint_graph_matches_value_and_ce_only_is_exact() {
        let b1 = [0.4, -1.2, 2.0, 0.1];
        let b2 = [1.5, 0.0, -0.3, 0.7];
        let mut tape = Tape::new();
        let (s, e) = (logits(&mut tape, &b1), logits(&mut tape, &b2));
        let ce = loss_ce(&mut tape, s, e, Span::new(2, 3)).unwrap();
        let q = [0.25; 4];
        let kd = loss_kd(&mut tape, s, e, &q, &q, 2.0).unwrap();
        let ans = loss_ans(&mut tape, s, e, Span::new(2, 3), Span::new(0, 1), 1.0).unwrap();
        let terms = LossTerms {
            ce: Some(ce),
            kd: Some(kd),
            ans: Some(ans),
            att: None,
        };
        let cfg = DistillConfig::default();
        let j = joint_graph(&mut tape, terms, &cfg).unwrap();
        let values = LossTerms {
            ce: Some(tape.scalar(ce)),
            kd: Some(tape.scalar(kd)),
            ans: Some(tape.scalar(ans)),
            att: None,
        };
        assert!((tape.scalar(j) - loss_joint(values, &cfg).unwrap()).abs() < 1e-12);
        let only = joint_graph(&mut tape, terms, &DistillConfig::ce_only()).unwrap();
        assert_eq!(only, ce);
    }

    #[test]
    fn joint_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = 6;
        // Gold logits sit well above the confusing ones, away from the hinge kink.
        let mut b1: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b2: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
        b1[2] += 0.2;
        let att = Tensor::matrix(m, 3, (0..m * 3).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let teacher_att = Tensor::matrix(m, 3, vec![1.0 / 3.0; m * 3]).unwrap();
        let q1 = softmax_temp(&[0.1, 0.5, 0.2, 0.0, -0.3, 0.4], 2.0, None).unwrap();
        let q2 = softmax_temp(&[0.3, -0.1, 0.0, 0.8, 0.2, 0.1], 2.0, None).unwrap();
        let cfg = DistillConfig::default();
        let report = grad_check(
            |tape, v| {
                let ce = loss_ce(tape, v[0], v[1], Span::new(2, 3))?;
                let kd = loss_kd(tape, v[0], v[1], &q1, &q2, cfg.tau)?;
                let ans = loss_ans(tape, v[0], v[1], Span::new(2, 3), Span::new(4, 5), cfg.margin)?;
                let a = tape.row_softmax(v[2], 1.0, None)?;
                let att = loss_att(tape, a, &teacher_att)?;
                let terms = LossTerms {
                    ce: Some(ce),
                    kd: Some(kd),
                    ans: Some(ans),
                    att: Some(att),
                };
                joint_graph(tape, terms, &cfg)
            },
            &[Tensor::vector(b1).unwrap(), Tensor::vector(b2).unwrap(), att],
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
