//! Deterministic templated fact corpora.
//!
//! Each passage lists one fact per entity, `"<entity>'s <attribute> is <value>."`,
//! and carries one question, `"What is <entity>'s <attribute>?"`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adversarial::append_adversarial;
use super::example::{Example, Span};
use crate::error::{Error, Result};

pub(crate) const NAMES: [&str; 40] = [
    "Alice", "Bruno", "Carla", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kira", "Lars", "Maya",
    "Nadia", "Omar", "Priya", "Quinn", "Rosa", "Sven", "Tara", "Umar", "Vera", "Wade", "Xena", "Yusuf", "Zara", "Amir",
    "Bianca", "Cyrus", "Dalia", "Emil", "Fiona", "Goran", "Hana", "Igor", "Jada", "Kofi", "Lena", "Milo", "Nora",
];

pub(crate) const CATEGORIES: [(&str, [&str; 10]); 8] = [
    ("color", ["red", "blue", "green", "yellow", "purple", "orange", "black", "white", "pink", "brown"]),
    ("city", ["Paris", "London", "Tokyo", "Berlin", "Madrid", "Rome", "Cairo", "Lima", "Oslo", "Dublin"]),
    ("pet", ["dog", "cat", "parrot", "hamster", "rabbit", "turtle", "goldfish", "ferret", "lizard", "pony"]),
    ("fruit", ["apple", "banana", "cherry", "mango", "peach", "plum", "grape", "lemon", "kiwi", "melon"]),
    ("instrument", ["piano", "violin", "guitar", "flute", "drum", "cello", "harp", "trumpet", "banjo", "oboe"]),
    ("sport", ["tennis", "soccer", "hockey", "rugby", "golf", "cricket", "baseball", "boxing", "rowing", "skiing"]),
    ("drink", ["tea", "coffee", "milk", "juice", "soda", "water", "cocoa", "lemonade", "cider", "kefir"]),
    ("job", ["doctor", "pilot", "farmer", "lawyer", "baker", "nurse", "chef", "judge", "poet", "sailor"]),
];

/// Category index of a value string, matched case-insensitively.
pub(crate) fn category_of(value: &str) -> Option<usize> {
    let v = value.trim().to_lowercase();
    CATEGORIES
        .iter()
        .position(|(_, values)| values.iter().any(|x| x.to_lowercase() == v))
}

/// Generator parameters. Equal specs produce identical corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub num_passages: usize,
    pub entities_per_passage: usize,
    /// Number of attribute categories in use (1 to 8).
    pub attribute_types: usize,
    /// Probability that another entity shares the asked attribute.
    pub distractor_rate: f64,
    pub adversarial: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            num_passages: 100,
            entities_per_passage: 3,
            attribute_types: 4,
            distractor_rate: 1.0,
            adversarial: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.entities_per_passage == 0 || self.entities_per_passage > 10 {
            return Err(Error::Config("entities_per_passage must be in 1..=10".into()));
        }
        if self.attribute_types == 0 || self.attribute_types > CATEGORIES.len() {
            return Err(Error::Config(format!("attribute_types must be in 1..={}", CATEGORIES.len())));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config("distractor_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Seed for the adversarial sentence of passage `index`.
fn adversarial_seed(seed: u64, index: usize) -> u64 {
    (seed ^ 0xad5e_a7ad_5e17_0000).wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

/// Generates `num_passages` examples. Passage `i` depends only on the seed and
/// `i`, so clean and adversarial corpora with equal seeds are paired.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.num_passages);
    for index in 0..spec.num_passages {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(index as u64);
        let mut ex = generate_passage(spec, index, &mut rng);
        if spec.adversarial {
            ex = append_adversarial(&ex, adversarial_seed(spec.seed, index));
        }
        out.push(ex);
    }
    Ok(out)
}

fn generate_passage(spec: &SynthSpec, index: usize, rng: &mut ChaCha8Rng) -> Example {
    let n_ent = spec.entities_per_passage;
    let n_cat = spec.attribute_types;
    let entities: Vec<&str> = NAMES.choose_multiple(rng, n_ent).copied().collect();

    // Entity 0 is the one asked about.
    let mut attrs: Vec<usize> = (0..n_ent).map(|_| rng.gen_range(0..n_cat)).collect();
    let share = n_ent >= 2 && rng.gen_bool(spec.distractor_rate);
    if share {
        let j = rng.gen_range(1..n_ent);
        attrs[j] = attrs[0];
    } else if n_cat >= 2 {
        let asked = attrs[0];
        for a in attrs.iter_mut().skip(1) {
            while *a == asked {
                *a = rng.gen_range(0..n_cat);
            }
        }
    }

    let mut values: Vec<&str> = Vec::with_capacity(n_ent);
    let mut used: Vec<Vec<&str>> = vec![Vec::new(); n_cat];
    for &a in &attrs {
        let pool: Vec<&str> = CATEGORIES[a].1.iter().copied().filter(|v| !used[a].contains(v)).collect();
        let v = *pool.choose(rng).expect("at most 10 entities per category");
        used[a].push(v);
        values.push(v);
    }

    let mut order: Vec<usize> = (0..n_ent).collect();
    order.shuffle(rng);

    let mut context = String::new();
    let mut answer_char = 0;
    for (k, &e) in order.iter().enumerate() {
        if k > 0 {
            context.push(' ');
        }
        let prefix = format!("{}'s {} is ", entities[e], CATEGORIES[attrs[e]].0);
        if e == 0 {
            answer_char = context.chars().count() + prefix.chars().count();
        }
        context.push_str(&prefix);
        context.push_str(values[e]);
        context.push('.');
    }
    let question = format!("What is {}'s {}?", entities[0], CATEGORIES[attrs[0]].0);
    let mut ex = Example::from_text(format!("synth-{:016x}-{index:06}", spec.seed), &question, &context);
    let tok = ex
        .token_char_offsets
        .iter()
        .position(|&(b, _)| b == answer_char)
        .expect("answer value starts a token");
    ex.gold_spans.push(Span::new(tok, tok));
    ex.answers.push(values[0].to_string());
    ex
}
