//! Teacher annotations and the distilled dataset file (JSON lines, sorted by id).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::config::DistillConfig;
use super::losses::TARGET_SUM_TOL;
use super::mining::{mine_member, most_confident, MinedSpan};
use crate::corpus::{Example, Span, Vocabulary};
use crate::decode_eval::decode_topk;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::reader::{forward, ReaderParams};

/// Distilled knowledge for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherAnnotation {
    pub example_id: String,
    /// Temperature the soft targets were normalized at.
    pub tau: f64,
    pub start_soft: Vec<f64>,
    pub end_soft: Vec<f64>,
    /// `[m, n]`, each row a distribution over question positions.
    pub attention: Tensor,
    pub confusing: Option<MinedSpan>,
}

fn row_sum_ok(row: &[f64], tol: f64) -> bool {
    (row.iter().sum::<f64>() - 1.0).abs() <= tol && row.iter().all(|&x| x >= 0.0)
}

impl TeacherAnnotation {
    pub fn passage_len(&self) -> usize {
        self.start_soft.len()
    }

    pub fn question_len(&self) -> usize {
        self.attention.cols()
    }

    pub fn confusing_span(&self) -> Option<Span> {
        self.confusing.map(|c| c.span)
    }

    /// Checks normalization and span bounds.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let m = self.start_soft.len();
        let bad = |msg: String| Error::Data(format!("annotation {}: {msg}", self.example_id));
        if m == 0 || self.end_soft.len() != m || self.attention.shape().len() != 2 || self.attention.rows() != m {
            return Err(bad(format!(
                "inconsistent lengths: start {}, end {}, attention {:?}",
                m,
                self.end_soft.len(),
                self.attention.shape()
            )));
        }
        if !row_sum_ok(&self.start_soft, tol) || !row_sum_ok(&self.end_soft, tol) {
            return Err(bad("soft targets are not normalized".into()));
        }
        if (0..m).any(|j| !row_sum_ok(self.attention.row(j), tol)) {
            return Err(bad("attention rows are not normalized".into()));
        }
        if let Some(c) = self.confusing {
            if !c.span.fits(m) {
                return Err(bad(format!("confusing span ({}, {}) out of range", c.span.start, c.span.end)));
            }
        }
        Ok(())
    }

    /// One JSON object on a single line; floats carry ten significant digits.
    pub fn to_json_line(&self) -> String {
        let mut s = String::with_capacity(64 + 16 * (2 * self.start_soft.len() + self.attention.len()));
        let id = serde_json::to_string(&self.example_id).expect("string serializes");
        let _ = write!(s, "{{\"example_id\":{id},\"tau\":{}", fmt_float(self.tau));
        s.push_str(",\"start_soft\":");
        push_floats(&mut s, &self.start_soft);
        s.push_str(",\"end_soft\":");
        push_floats(&mut s, &self.end_soft);
        s.push_str(",\"attention\":[");
        for j in 0..self.attention.rows() {
            if j > 0 {
                s.push(',');
            }
            push_floats(&mut s, self.attention.row(j));
        }
        s.push(']');
        match self.confusing {
            Some(c) => {
                let _ = write!(
                    s,
                    ",\"confusing_span\":[{},{}],\"confusing_confidence\":{}",
                    c.span.start,
                    c.span.end,
                    fmt_float(c.confidence)
                );
            }
            None => s.push_str(",\"confusing_span\":null,\"confusing_confidence\":null"),
        }
        s.push('}');
        s
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Record {
            example_id: String,
            tau: f64,
            start_soft: Vec<f64>,
            end_soft: Vec<f64>,
            attention: Vec<Vec<f64>>,
            confusing_span: Option<[usize; 2]>,
            confusing_confidence: Option<f64>,
        }
        let r: Record = serde_json::from_str(line).map_err(|e| Error::Data(format!("bad annotation record: {e}")))?;
        let attention = Tensor::from_rows(&r.attention)
            .map_err(|e| Error::Data(format!("annotation {}: attention: {e}", r.example_id)))?;
        let confusing = match (r.confusing_span, r.confusing_confidence) {
            (Some([i, j]), Some(c)) => Some(MinedSpan {
                span: Span::new(i, j),
                confidence: c,
            }),
            (None, None) => None,
            _ => {
                return Err(Error::Data(format!(
                    "annotation {}: confusing span and confidence must both be present or both null",
                    r.example_id
                )))
            }
        };
        Ok(Self {
            example_id: r.example_id,
            tau: r.tau,
            start_soft: r.start_soft,
            end_soft: r.end_soft,
            attention,
            confusing,
        })
    }
}

fn fmt_float(x: f64) -> String {
    format!("{x:.9e}")
}

fn push_floats(s: &mut String, xs: &[f64]) {
    s.push('[');
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_float(*x));
    }
    s.push(']');
}

/// Annotation from one teacher: soft targets at `cfg.tau`, attention, and the
/// member's own confusing-span contribution.
pub fn annotate_member(
    params: &ReaderParams,
    vocab: &Vocabulary,
    example: &Example,
    cfg: &DistillConfig,
) -> Result<TeacherAnnotation> {
    let out = forward(params, &vocab.encode(example), cfg.tau)?;
    let candidates = decode_topk(example, &out.start_dist, &out.end_dist, cfg.top_k, cfg.max_span_len);
    let golds = if example.is_labeled() {
        example.gold_texts()
    } else {
        Vec::new()
    };
    Ok(TeacherAnnotation {
        example_id: example.id.clone(),
        tau: cfg.tau,
        start_soft: out.start_soft,
        end_soft: out.end_soft,
        attention: out.attention,
        confusing: mine_member(&candidates, &golds),
    })
}

/// Element-wise means of the members' distributions; the confusing span is
/// the most confident member contribution.
pub fn aggregate_ensemble(members: &[TeacherAnnotation]) -> Result<TeacherAnnotation> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("cannot aggregate an empty ensemble".into()))?;
    for m in &members[1..] {
        if m.example_id != first.example_id || m.tau != first.tau {
            return Err(Error::Data(format!(
                "ensemble members disagree on example or temperature ({} at {} vs {} at {})",
                first.example_id, first.tau, m.example_id, m.tau
            )));
        }
        if m.start_soft.len() != first.start_soft.len()
            || m.end_soft.len() != first.end_soft.len()
            || m.attention.shape() != first.attention.shape()
        {
            return Err(Error::Shape {
                op: "aggregate_ensemble",
                left: first.attention.shape().to_vec(),
                right: m.attention.shape().to_vec(),
            });
        }
    }
    let n = members.len() as f64;
    let mean = |get: &dyn Fn(&TeacherAnnotation) -> &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; get(first).len()];
        for m in members {
            for (a, x) in acc.iter_mut().zip(get(m)) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / n).collect()
    };
    let attention = Tensor::new(first.attention.shape().to_vec(), mean(&|m| m.attention.data()))?;
    Ok(TeacherAnnotation {
        example_id: first.example_id.clone(),
        tau: first.tau,
        start_soft: mean(&|m| &m.start_soft),
        end_soft: mean(&|m| &m.end_soft),
        attention,
        confusing: most_confident(members.iter().map(|m| m.confusing)),
    })
}

/// Writes records sorted by example id, one per line.
pub fn write_distilled(path: &Path, records: &[TeacherAnnotation]) -> Result<()> {
    let mut sorted: Vec<&TeacherAnnotation> = records.iter().collect();
    sorted.sort_by(|a, b| a.example_id.cmp(&b.example_id));
    let mut text = String::new();
    for r in sorted {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and validates a distilled dataset file.
pub fn read_distilled(path: &Path) -> Result<Vec<TeacherAnnotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = TeacherAnnotation::from_json_line(line)
            .and_then(|r| r.validate(TARGET_SUM_TOL).map(|_| r))
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reader::ReaderDims;

    fn ann(id: &str, p: Vec<f64>, conf: Option<(usize, usize, f64)>) -> TeacherAnnotation {
        let m = p.len();
        TeacherAnnotation {
            example_id: id.into(),
            tau: 2.0,
            start_soft: p.clone(),
            end_soft: p.iter().rev().copied().collect(),
            attention: Tensor::matrix(m, 2, vec![0.5; 2 * m]).unwrap(),
            confusing: conf.map(|(i, j, c)| MinedSpan {
                span: Span::new(i, j),
                confidence: c,
            }),
        }
    }

    #[test]
    fn mean_of_two_one_hots() {
        let a = ann("x", vec![1.0, 0.0], Some((0, 0, 0.3)));
        let b = ann("x", vec![0.0, 1.0], Some((1, 1, 0.45)));
        let agg = aggregate_ensemble(&[a.clone(), b]).unwrap();
        assert_eq!(agg.start_soft, vec![0.5, 0.5]);
        assert_eq!(agg.confusing.unwrap().span, Span::new(1, 1));
        assert_eq!(aggregate_ensemble(&[a.clone()]).unwrap(), a);
        assert_eq!(aggregate_ensemble(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);
    }

    #[test]
    fn aggregation_rejects_mismatch() {
        let a = ann("x", vec![1.0, 0.0], None);
        assert!(aggregate_ensemble(&[a.clone(), ann("y", vec![1.0, 0.0], None)]).is_err());
        assert!(aggregate_ensemble(&[a, ann("x", vec![1.0, 0.0, 0.0], None)]).is_err());
        assert!(aggregate_ensemble(&[]).is_err());
    }

    #[test]
    fn json_line_round_trip() {
        let a = ann("ex\"1", vec![0.2, 0.3, 0.5], Some((0, 2, 0.125)));
        let line = a.to_json_line();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["confusing_span"], serde_json::json!([0, 2]));
        let back = TeacherAnnotation::from_json_line(&line).unwrap();
        assert_eq!(back.example_id, a.example_id);
        assert_eq!(back.confusing, a.confusing);
        for (x, y) in back.start_soft.iter().zip(&a.start_soft) {
            assert!((x - y).abs() < 1e-12);
        }
        let none = ann("b", vec![1.0], None).to_json_line();
        assert!(none.contains("\"confusing_span\":null"));
        assert!(TeacherAnnotation::from_json_line("{\"example_id\":1}").is_err());
    }

    #[test]
    fn file_is_sorted_and_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_distilled(&path, &[ann("b", vec![1.0], None), ann("a", vec![0.5, 0.5], None)]).unwrap();
        let back = read_distilled(&path).unwrap();
        assert_eq!(back.iter().map(|r| r.example_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        write_distilled(&path, &[ann("c", vec![0.5, 0.6], None)]).unwrap();
        assert!(matches!(read_distilled(&path), Err(Error::Data(_))));
    }

    #[test]
    fn member_annotation_is_normalized() {
        let mut ex = Example::from_text("e", "What is Ann's pet?", "Ann's pet is cat. Bob's pet is dog.");
        ex.gold_spans.push(Span::new(3, 3));
        ex.answers.push("cat".into());
        let vocab = Vocabulary::build([&ex], 100);
        let params = ReaderParams::init(ReaderDims::new(vocab.len(), 4, 4).unwrap(), 1);
        let cfg = DistillConfig::default();
        let a = annotate_member(&params, &vocab, &ex, &cfg).unwrap();
        a.validate(1e-9).unwrap();
        assert_eq!(a.passage_len(), ex.passage_len());
        assert_eq!(a.question_len(), ex.question_len());
        if let Some(c) = a.confusing {
            assert!(!ex.span_text(c.span).contains("cat"));
        }
    }
}
