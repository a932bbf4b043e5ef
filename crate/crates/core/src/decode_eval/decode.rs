use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Span};

/// Candidate answer span with score `p1[start] * p2[end]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub text: String,
}

impl SpanPrediction {
    pub fn span(&self) -> Span {
        Span::new(self.start, self.end)
    }
}

/// Ranking used everywhere candidates are ordered: higher score first, then
/// smaller start, then smaller end.
pub fn rank_order(a: (f64, usize, usize), b: (f64, usize, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
}

#[derive(PartialEq)]
struct Ranked(f64, usize, usize);

impl Eq for Ranked {}

impl Ord for Ranked {
    // Greater means better.
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order((other.0, other.1, other.2), (self.0, self.1, self.2))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The `k` best spans with `start <= end`, `end - start < max_span_len` and a
/// positive score, best first. Fewer than `k` are returned when fewer exist.
pub fn topk_spans(p1: &[f64], p2: &[f64], k: usize, max_span_len: usize) -> Vec<SpanPrediction> {
    let m = p1.len().min(p2.len());
    if k == 0 || max_span_len == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for start in 0..m {
        if p1[start] <= 0.0 {
            continue;
        }
        let last = (start + max_span_len).min(m);
        for end in start..last {
            let score = p1[start] * p2[end];
            if score <= 0.0 {
                continue;
            }
            let cand = Ranked(score, start, end);
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if heap.peek().is_some_and(|worst| cand > worst.0) {
                heap.pop();
                heap.push(Reverse(cand));
            }
        }
    }
    let mut out: Vec<Ranked> = heap.into_iter().map(|r| r.0).collect();
    out.sort_by(|a, b| b.cmp(a));
    out.into_iter()
        .map(|Ranked(score, start, end)| SpanPrediction {
            start,
            end,
            score,
            text: String::new(),
        })
        .collect()
}

/// [`topk_spans`] with span texts filled in from `example`.
pub fn decode_topk(example: &Example, p1: &[f64], p2: &[f64], k: usize, max_span_len: usize) -> Vec<SpanPrediction> {
    let mut spans = topk_spans(p1, p2, k, max_span_len);
    for s in &mut spans {
        s.text = example.span_text(s.span()).to_string();
    }
    spans
}

/// Best single span, or `None` when no span has positive score.
pub fn best_span(example: &Example, p1: &[f64], p2: &[f64], max_span_len: usize) -> Option<SpanPrediction> {
    decode_topk(example, p1, p2, 1, max_span_len).into_iter().next()
}
