use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_answer, overlap_f1};
use crate::corpus::Example;
use crate::error::{Error, Result};

/// Question-type buckets, keyed by the lowercased first question token.
pub const QUESTION_TYPES: [&str; 8] = ["what", "who", "which", "how", "why", "when", "where", "other"];

pub fn question_type(question_tokens: &[String]) -> &'static str {
    let first = question_tokens.first().map(|t| t.to_lowercase()).unwrap_or_default();
    QUESTION_TYPES[..7].iter().find(|&&t| t == first).copied().unwrap_or("other")
}

/// Official-format predictions: example id to answer string.
pub type Predictions = BTreeMap<String, String>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub count: usize,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub count: usize,
    /// Percentages in [0, 100].
    pub em: f64,
    pub f1: f64,
    /// Examples with no prediction; each scores zero.
    pub missing: usize,
    pub adversarial_count: usize,
    pub per_type: BTreeMap<String, BucketScore>,
}

/// Per-example (EM, F1) in [0, 1] against every gold answer.
pub fn score_answer(prediction: &str, golds: &[String]) -> (f64, f64) {
    let pred = normalize_answer(prediction);
    let em = golds.iter().any(|g| normalize_answer(g) == pred);
    let f1 = golds.iter().map(|g| overlap_f1(g, prediction)).fold(0.0, f64::max);
    (if em { 1.0 } else { 0.0 }, f1)
}

/// Corpus EM/F1 over labeled examples, with a per-question-type breakdown.
pub fn evaluate(predictions: &Predictions, examples: &[Example]) -> EvalReport {
    let mut report = EvalReport::default();
    let mut sums: BTreeMap<&'static str, (usize, f64, f64)> = BTreeMap::new();
    let (mut em_sum, mut f1_sum) = (0.0, 0.0);
    for ex in examples {
        let golds = ex.gold_texts();
        if golds.is_empty() {
            continue;
        }
        report.count += 1;
        if ex.adversarial {
            report.adversarial_count += 1;
        }
        let (em, f1) = match predictions.get(&ex.id) {
            Some(p) => score_answer(p, &golds),
            None => {
                report.missing += 1;
                (0.0, 0.0)
            }
        };
        em_sum += em;
        f1_sum += f1;
        let bucket = sums.entry(question_type(&ex.question_tokens)).or_default();
        bucket.0 += 1;
        bucket.1 += em;
        bucket.2 += f1;
    }
    if report.missing > 0 {
        log::warn!("{} examples have no prediction and score zero", report.missing);
    }
    if report.count > 0 {
        report.em = 100.0 * em_sum / report.count as f64;
        report.f1 = 100.0 * f1_sum / report.count as f64;
    }
    report.per_type = sums
        .into_iter()
        .map(|(k, (n, em, f1))| {
            (
                k.to_string(),
                BucketScore {
                    count: n,
                    em: 100.0 * em / n as f64,
                    f1: 100.0 * f1 / n as f64,
                },
            )
        })
        .collect();
    report
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_predictions(path: &Path, predictions: &Predictions) -> Result<()> {
    let text = serde_json::to_string_pretty(predictions).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn example(id: &str, question: &str, context: &str, answers: &[&str]) -> Example {
        let mut ex = Example::from_text(id, question, context);
        ex.answers = answers.iter().map(|s| s.to_string()).collect();
        ex.gold_spans.push(Span::new(0, 0));
        ex
    }

    #[test]
    fn perfect_predictions_score_100() {
        let exs = vec![
            example("a", "What is it?", "red fox", &["red"]),
            example("b", "Who is it?", "Bob ran", &["Bob"]),
        ];
        let preds: Predictions = exs.iter().map(|e| (e.id.clone(), e.answers[0].clone())).collect();
        let r = evaluate(&preds, &exs);
        assert_eq!((r.em, r.f1), (100.0, 100.0));
        assert_eq!(r.per_type["what"].count, 1);
        assert_eq!(r.per_type["who"].count, 1);
    }

    #[test]
    fn empty_predictions_warn_per_example() {
        let exs = vec![example("a", "What?", "x", &["x"]), example("b", "Why?", "y", &["y"])];
        let r = evaluate(&Predictions::new(), &exs);
        assert_eq!((r.em, r.f1, r.missing), (0.0, 0.0, 2));
    }

    #[test]
    fn corpus_f1_is_mean() {
        let exs = vec![example("a", "What?", "x", &["cat"]), example("b", "What?", "y", &["cat sat"])];
        let mut preds = Predictions::new();
        preds.insert("a".into(), "cat".into());
        preds.insert("b".into(), "cat dog".into()); // P = R = 1/2
        let r = evaluate(&preds, &exs);
        assert!((r.f1 - 75.0).abs() < 1e-9);
        assert!((r.em - 50.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_invariant() {
        let exs = vec![
            example("a", "What?", "x", &["cat"]),
            example("b", "Who?", "y", &["cat sat"]),
            example("c", "How?", "z", &["the end"]),
        ];
        let mut preds = Predictions::new();
        preds.insert("a".into(), "dog".into());
        preds.insert("b".into(), "sat".into());
        preds.insert("c".into(), "End".into());
        let forward = evaluate(&preds, &exs);
        let mut rev = exs.clone();
        rev.reverse();
        assert_eq!(forward, evaluate(&preds, &rev));
    }

    #[test]
    fn question_types() {
        let q = |s: &str| vec![s.to_string()];
        assert_eq!(question_type(&q("When")), "when");
        assert_eq!(question_type(&q("In")), "other");
        assert_eq!(question_type(&[]), "other");
    }
}
