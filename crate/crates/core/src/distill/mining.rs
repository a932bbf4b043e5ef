//! Confusing-answer mining over teacher top-K lists.

use serde::{Deserialize, Serialize};

use crate::corpus::Span;
use crate::decode_eval::{overlap_f1, SpanPrediction};

/// A confusing span and the teacher confidence `p1(i) * p2(j)` behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinedSpan {
    pub span: Span,
    pub confidence: f64,
}

/// True when `text` shares no normalized token with any gold answer.
pub fn disjoint_from_golds(text: &str, golds: &[String]) -> bool {
    golds.iter().all(|g| overlap_f1(g, text) == 0.0)
}

/// One member's contribution: the most confident candidate with zero overlap
/// against every gold. `None` when all candidates overlap some gold, or when
/// there are no golds to compare against.
pub fn mine_member(candidates: &[SpanPrediction], golds: &[String]) -> Option<MinedSpan> {
    if golds.is_empty() {
        return None;
    }
    let mut best: Option<MinedSpan> = None;
    for c in candidates {
        if !disjoint_from_golds(&c.text, golds) {
            continue;
        }
        if best.map_or(true, |b| c.score > b.confidence) {
            best = Some(MinedSpan {
                span: c.span(),
                confidence: c.score,
            });
        }
    }
    best
}

/// Highest-confidence contribution across members; earlier members win ties.
pub fn most_confident(contributions: impl IntoIterator<Item = Option<MinedSpan>>) -> Option<MinedSpan> {
    contributions
        .into_iter()
        .flatten()
        .fold(None, |best: Option<MinedSpan>, c| match best {
            Some(b) if b.confidence >= c.confidence => Some(b),
            _ => Some(c),
        })
}

/// Mines each member's top-K list and keeps the most confident contribution.
pub fn mine_confusing(members: &[Vec<SpanPrediction>], golds: &[String]) -> Option<MinedSpan> {
    most_confident(members.iter().map(|c| mine_member(c, golds)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(start: usize, end: usize, score: f64, text: &str) -> SpanPrediction {
        SpanPrediction {
            start,
            end,
            score,
            text: text.into(),
        }
    }

    #[test]
    fn picks_best_zero_overlap_candidate() {
        let golds = vec!["red apple".to_string()];
        let list = vec![
            cand(0, 1, 0.6, "red wagon"),
            cand(3, 3, 0.3, "blue"),
            cand(5, 5, 0.25, "green"),
        ];
        let got = mine_member(&list, &golds).unwrap();
        assert_eq!(got.span, Span::new(3, 3));
        assert_eq!(got.confidence, 0.3);
    }

    #[test]
    fn skip_when_every_candidate_overlaps() {
        let golds = vec!["the red apple".to_string()];
        let list = vec![cand(0, 1, 0.6, "red"), cand(1, 2, 0.2, "an apple")];
        assert_eq!(mine_member(&list, &golds), None);
        assert_eq!(mine_confusing(&[list], &golds), None);
        assert_eq!(mine_member(&[cand(0, 0, 0.9, "x")], &[]), None);
    }

    #[test]
    fn articles_alone_do_not_count_as_overlap() {
        let golds = vec!["the cat".to_string()];
        let got = mine_member(&[cand(2, 3, 0.5, "the dog")], &golds).unwrap();
        assert_eq!(got.span, Span::new(2, 3));
    }

    #[test]
    fn every_gold_must_be_disjoint() {
        let golds = vec!["cat".to_string(), "black dog".to_string()];
        let list = vec![cand(0, 0, 0.5, "dog"), cand(1, 1, 0.4, "bird")];
        assert_eq!(mine_member(&list, &golds).unwrap().span, Span::new(1, 1));
    }

    #[test]
    fn cross_member_maximum() {
        let golds = vec!["gold".to_string()];
        let a = vec![cand(0, 0, 0.5, "gold"), cand(1, 1, 0.3, "x")];
        let b = vec![cand(2, 2, 0.45, "y")];
        let c = vec![cand(0, 0, 0.9, "gold")];
        let got = mine_confusing(&[a.clone(), b, c], &golds).unwrap();
        assert_eq!(got.span, Span::new(2, 2));
        let tie = vec![cand(4, 4, 0.3, "z")];
        assert_eq!(mine_confusing(&[a, tie], &golds).unwrap().span, Span::new(1, 1));
    }
}
