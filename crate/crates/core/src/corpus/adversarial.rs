//! Distractor-sentence transform: append a sentence that mimics the question
//! with a perturbed subject and a conflicting value of the gold answer's category.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::example::Example;
use super::synth::{category_of, CATEGORIES, NAMES};
use super::tokenize::tokenize;
use crate::decode_eval::normalize_answer;

const FALLBACK_WORDS: [&str; 8] = ["marble", "lantern", "harbor", "meadow", "copper", "thistle", "quartz", "ember"];
const WH_WORDS: [&str; 7] = ["what", "who", "which", "how", "why", "when", "where"];

fn template() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^What is (\S+)'s (\S+)\?$").expect("static pattern"))
}

/// Near-duplicate of a name: its last letter doubled ("Alice" -> "Alicee").
pub fn near_duplicate(word: &str) -> String {
    match word.char_indices().rev().find(|(_, c)| c.is_alphabetic()) {
        Some((i, c)) => {
            let mut s = String::with_capacity(word.len() + c.len_utf8());
            s.push_str(&word[..i + c.len_utf8()]);
            s.push(c);
            s.push_str(&word[i + c.len_utf8()..]);
            s
        }
        None => format!("{word}x"),
    }
}

/// A value with the same surface category as `gold`, never equal to any gold
/// answer after normalization.
fn conflicting_value(gold: &str, golds_norm: &[String], passage: &[String], rng: &mut ChaCha8Rng) -> String {
    let allowed = |v: &str| {
        let n = normalize_answer(v);
        !n.is_empty() && !golds_norm.contains(&n)
    };
    if let Some(cat) = category_of(gold) {
        let candidates: Vec<&str> = CATEGORIES[cat].1.iter().copied().filter(|v| allowed(v)).collect();
        // Prefer values not already in the passage.
        let fresh: Vec<&str> = candidates
            .iter()
            .copied()
            .filter(|v| !passage.iter().any(|t| t.eq_ignore_ascii_case(v)))
            .collect();
        let pool = if fresh.is_empty() { &candidates } else { &fresh };
        if let Some(v) = pool.choose(rng) {
            return v.to_string();
        }
    }
    let trimmed = gold.trim();
    if let Ok(n) = trimmed.replace(',', "").parse::<i64>() {
        loop {
            let v = (n + rng.gen_range(1..=50)).to_string();
            if allowed(&v) {
                return v;
            }
        }
    }
    if let Ok(x) = trimmed.parse::<f64>() {
        let v = format!("{:.1}", x + rng.gen_range(1..=50) as f64);
        if allowed(&v) {
            return v;
        }
    }
    let capitalized = trimmed.chars().next().is_some_and(char::is_uppercase);
    let pool: Vec<&str> = if capitalized { NAMES.to_vec() } else { FALLBACK_WORDS.to_vec() };
    let ok: Vec<&str> = pool.into_iter().filter(|v| allowed(v)).collect();
    ok.choose(rng).map_or_else(|| "nothing".to_string(), |v| v.to_string())
}

fn distractor_sentence(example: &Example, value: &str) -> String {
    if let Some(c) = template().captures(example.question.trim()) {
        return format!("{}'s {} is {value}.", near_duplicate(&c[1]), &c[2]);
    }
    let mut words: Vec<String> = example.question_tokens.clone();
    if words.first().is_some_and(|w| WH_WORDS.contains(&w.to_lowercase().as_str())) {
        words.remove(0);
    }
    while words.last().is_some_and(|w| w.chars().all(|c| c.is_ascii_punctuation())) {
        words.pop();
    }
    let body: Vec<String> = words
        .into_iter()
        .map(|w| if w.chars().next().is_some_and(char::is_uppercase) { near_duplicate(&w) } else { w })
        .collect();
    if body.is_empty() {
        format!("{value}.")
    } else {
        format!("{} {value}.", body.join(" "))
    }
}

/// Appends a distractor sentence to the passage. Gold spans are unchanged and
/// the sentence contains a same-category value that differs from every gold.
pub fn append_adversarial(example: &Example, seed: u64) -> Example {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let golds = example.gold_texts();
    let golds_norm: Vec<String> = golds.iter().map(|g| normalize_answer(g)).collect();
    let first = golds.first().map(String::as_str).unwrap_or("");
    let value = conflicting_value(first, &golds_norm, &example.passage_tokens, &mut rng);
    let sentence = distractor_sentence(example, &value);

    let mut out = example.clone();
    let mut base = out.raw_context.chars().count();
    if !out.raw_context.is_empty() {
        out.raw_context.push(' ');
        base += 1;
    }
    out.raw_context.push_str(&sentence);
    for t in tokenize(&sentence) {
        out.passage_tokens.push(t.text);
        out.token_char_offsets.push((base + t.begin, base + t.end));
    }
    out.adversarial = true;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Span, SynthSpec};
    use crate::decode_eval::evaluate;

    fn squad_like() -> Example {
        let mut ex = Example::from_text(
            "q",
            "Who founded Acme in 1901?",
            "Acme was founded in 1901 by Ruth Baker, a chemist.",
        );
        ex.gold_spans.push(Span::new(6, 7));
        ex.answers.push("Ruth Baker".into());
        ex
    }

    #[test]
    fn passage_grows_and_golds_survive() {
        let ex = squad_like();
        let adv = append_adversarial(&ex, 3);
        assert!(adv.passage_len() > ex.passage_len());
        assert_eq!(adv.gold_spans, ex.gold_spans);
        assert_eq!(adv.span_text(adv.gold_spans[0]), "Ruth Baker");
        adv.validate().unwrap();
        assert!(adv.adversarial);
    }

    #[test]
    fn distractor_value_differs_from_gold() {
        let spec = SynthSpec {
            seed: 1,
            num_passages: 200,
            ..SynthSpec::default()
        };
        for (i, ex) in generate_synthetic(&spec).unwrap().iter().enumerate() {
            let adv = append_adversarial(ex, i as u64);
            let appended = &adv.passage_tokens[ex.passage_len()..];
            // "<dup>'s <attr> is <value> ."
            assert_eq!(appended.len(), 5);
            let value = &appended[3];
            assert_ne!(normalize_answer(value), normalize_answer(&ex.answers[0]));
            assert_eq!(category_of(value), category_of(&ex.answers[0]));
            assert_ne!(appended[0], ex.question_tokens[2]);
        }
    }

    #[test]
    fn gold_still_scores_perfectly_after_transform() {
        let ex = squad_like();
        let adv = append_adversarial(&ex, 9);
        let preds = [(adv.id.clone(), adv.span_text(adv.gold_spans[0]).to_string())].into_iter().collect();
        let r = evaluate(&preds, &[adv]);
        assert_eq!(r.em, 100.0);
        assert_eq!(r.adversarial_count, 1);
    }

    #[test]
    fn numeric_answers_get_numeric_distractors() {
        let mut ex = Example::from_text("n", "How many?", "It had 42 rooms.");
        ex.gold_spans.push(Span::new(2, 2));
        ex.answers.push("42".into());
        let adv = append_adversarial(&ex, 0);
        let tail = &adv.passage_tokens[ex.passage_len()..];
        let n: i64 = tail[tail.len() - 2].parse().unwrap();
        assert_ne!(n, 42);
    }

    #[test]
    fn near_duplicates() {
        assert_eq!(near_duplicate("Alice"), "Alicee");
        assert_eq!(near_duplicate("Zoë"), "Zoëë");
        for name in NAMES {
            assert!(!NAMES.contains(&near_duplicate(name).as_str()));
        }
    }
}
