//! Finite-difference checks of every loss through the full reader on a toy
//! instance (3-token question, 6-token passage).

use crate::corpus::Span;
use crate::distill::{joint_graph, loss_ans, loss_att, loss_ce, loss_kd, DistillConfig, LossTerms};
use crate::error::Result;
use crate::numerics::{grad_check, GradCheckReport, Tape, Tensor, Var};
use crate::reader::{forward, forward_graph, ParamVars, ReaderDims, ReaderOutput, ReaderParams};
use crate::corpus::EncodedExample;

pub const SUITE_EPS: f64 = 1e-6;
pub const SUITE_TOL: f64 = 1e-4;
const QUESTION: [usize; 3] = [2, 3, 4];
const PASSAGE: [usize; 6] = [5, 6, 3, 7, 8, 9];
const GOLD: Span = Span { start: 1, end: 3 };

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn toy_params(seed: u64) -> ReaderParams {
    let mut p = ReaderParams::init(ReaderDims::new(10, 4, 4).expect("valid dims"), seed);
    // Weights on [-0.5, 0.5] so every path carries a visible gradient.
    for t in p.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 10.0);
    }
    p
}

fn toy_input() -> EncodedExample {
    EncodedExample {
        question: QUESTION.to_vec(),
        passage: PASSAGE.to_vec(),
    }
}

/// Confusing span whose hinge arguments sit farthest from the kink.
fn confusing_away_from_kink(out: &ReaderOutput, margin: f64) -> Span {
    let m = out.passage_len();
    let mut best = (f64::MIN, Span::new(0, 0));
    for i in 0..m {
        for j in i..m {
            let s = Span::new(i, j);
            if s == GOLD {
                continue;
            }
            let a = margin - out.start_logits[GOLD.start] + out.start_logits[i];
            let b = margin - out.end_logits[GOLD.end] + out.end_logits[j];
            let gap = a.abs().min(b.abs());
            if gap > best.0 {
                best = (gap, s);
            }
        }
    }
    best.1
}

fn check<F>(name: String, params: &ReaderParams, loss: F) -> Result<SuiteEntry>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let report = grad_check(
        |tape, vars| {
            let pv = ParamVars(vars.try_into().expect("eleven parameters"));
            loss(tape, &pv)
        },
        params.tensors(),
        SUITE_EPS,
        SUITE_TOL,
    )?;
    Ok(SuiteEntry { name, report })
}

/// Checks L_CE, L_KD at each temperature in `taus`, L_ANS, L_ATT, and the
/// joint objective with respect to every reader parameter.
pub fn gradient_suite(seed: u64, taus: &[f64]) -> Result<Vec<SuiteEntry>> {
    let student = toy_params(seed);
    let teacher = toy_params(seed.wrapping_add(1));
    let input = toy_input();
    let cfg = DistillConfig::default();
    let base = forward(&student, &input, 1.0)?;
    let confusing = confusing_away_from_kink(&base, cfg.margin);
    let teacher_att: Tensor = forward(&teacher, &input, 1.0)?.attention;

    let mut out = Vec::new();
    out.push(check("L_CE".into(), &student, |tape, p| {
        let g = forward_graph(tape, p, &QUESTION, &PASSAGE)?;
        loss_ce(tape, g.start_logits, g.end_logits, GOLD)
    })?);
    for &tau in taus {
        let t = forward(&teacher, &input, tau)?;
        out.push(check(format!("L_KD tau={tau}"), &student, |tape, p| {
            let g = forward_graph(tape, p, &QUESTION, &PASSAGE)?;
            loss_kd(tape, g.start_logits, g.end_logits, &t.start_soft, &t.end_soft, tau)
        })?);
    }
    out.push(check("L_ANS".into(), &student, |tape, p| {
        let g = forward_graph(tape, p, &QUESTION, &PASSAGE)?;
        loss_ans(tape, g.start_logits, g.end_logits, GOLD, confusing, cfg.margin)
    })?);
    out.push(check("L_ATT".into(), &student, |tape, p| {
        let g = forward_graph(tape, p, &QUESTION, &PASSAGE)?;
        loss_att(tape, g.attention, &teacher_att)
    })?);
    let t = forward(&teacher, &input, cfg.tau)?;
    out.push(check("L joint".into(), &student, |tape, p| {
        let g = forward_graph(tape, p, &QUESTION, &PASSAGE)?;
        let terms = LossTerms {
            ce: Some(loss_ce(tape, g.start_logits, g.end_logits, GOLD)?),
            kd: Some(loss_kd(tape, g.start_logits, g.end_logits, &t.start_soft, &t.end_soft, cfg.tau)?),
            ans: Some(loss_ans(tape, g.start_logits, g.end_logits, GOLD, confusing, cfg.margin)?),
            att: Some(loss_att(tape, g.attention, &teacher_att)?),
        };
        joint_graph(tape, terms, &cfg)
    })?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let entries = gradient_suite(0, &[2.0]).unwrap();
        assert_eq!(entries.len(), 5);
        for e in entries {
            assert!(e.report.passed(), "{}: {:?}", e.name, e.report.max_rel_error());
            assert_eq!(e.report.params.len(), 11);
        }
    }
}
