use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("static pattern"))
}

/// Official SQuAD answer normalization: lowercase, drop ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Bag-of-tokens F1 between normalized strings. Two empty strings score 1;
/// one empty string scores 0.
pub fn overlap_f1(gold: &str, candidate: &str) -> f64 {
    let g = normalize_answer(gold);
    let c = normalize_answer(candidate);
    let gold_toks: Vec<&str> = g.split_whitespace().collect();
    let cand_toks: Vec<&str> = c.split_whitespace().collect();
    if gold_toks.is_empty() || cand_toks.is_empty() {
        return if gold_toks.is_empty() && cand_toks.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gold_toks {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &cand_toks {
        if let Some(n) = counts.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / cand_toks.len() as f64;
    let recall = common as f64 / gold_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(gold: &str, candidate: &str) -> bool {
    normalize_answer(gold) == normalize_answer(candidate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Answer!"), "answer");
        assert_eq!(normalize_answer("a an the"), "");
        assert_eq!(normalize_answer("  Theory of   an Apple. "), "theory of apple");
        assert_eq!(normalize_answer("56.2%"), "562");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(overlap_f1("red fox", "red fox"), 1.0);
        assert_eq!(overlap_f1("red fox", "blue whale"), 0.0);
        assert!((overlap_f1("the cat sat", "cat sat down") - 0.8).abs() < 1e-12);
        assert_eq!(overlap_f1("the", "a"), 1.0);
        assert_eq!(overlap_f1("cat", "the"), 0.0);
    }

    #[test]
    fn multiplicity_is_min_count() {
        let f = overlap_f1("go go stop", "go stop stop");
        // common = min(2,1) for go + min(1,2) for stop = 2; P = R = 2/3
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_answer(&s);
            proptest::prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn f1_is_bounded_and_one_on_equal_multisets(a in "[a-d ]{0,12}", b in "[a-d ]{0,12}") {
            let f = overlap_f1(&a, &b);
            proptest::prop_assert!((0.0..=1.0).contains(&f));
            let mut ta: Vec<String> = normalize_answer(&a).split_whitespace().map(String::from).collect();
            let mut tb: Vec<String> = normalize_answer(&b).split_whitespace().map(String::from).collect();
            ta.sort();
            tb.sort();
            proptest::prop_assert_eq!(f == 1.0, ta == tb);
        }
    }
}
