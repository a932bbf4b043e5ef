use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::example::Example;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const RESERVED: [&str; 2] = ["<pad>", "<unk>"];

/// Lowercased token vocabulary. Index 0 is padding, index 1 is unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

/// Token ids of one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub question: Vec<usize>,
    pub passage: Vec<usize>,
}

impl Vocabulary {
    /// Builds from training examples: most frequent lowercased tokens first
    /// (ties alphabetical), capped at `cap` entries including reserved ones.
    pub fn build<'a>(examples: impl IntoIterator<Item = &'a Example>, cap: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for ex in examples {
            for t in ex.question_tokens.iter().chain(&ex.passage_tokens) {
                *counts.entry(t.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = cap.saturating_sub(RESERVED.len());
        let words = ranked.into_iter().take(keep).map(|(w, _)| w);
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words).collect())
            .expect("freshly built vocabulary is well formed")
    }

    /// Rebuilds from a stored token list (reserved entries first).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Data("vocabulary must start with <pad>, <unk>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate().skip(RESERVED.len()) {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, example: &Example) -> EncodedExample {
        EncodedExample {
            question: example.question_tokens.iter().map(|t| self.id(t)).collect(),
            passage: example.passage_tokens.iter().map(|t| self.id(t)).collect(),
        }
    }

    /// Short content hash identifying this vocabulary.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Fraction of passage and question tokens that are in-vocabulary.
    pub fn coverage(&self, examples: &[Example]) -> f64 {
        let (mut known, mut total) = (0usize, 0usize);
        for ex in examples {
            for t in ex.question_tokens.iter().chain(&ex.passage_tokens) {
                total += 1;
                if self.id(t) != UNK {
                    known += 1;
                }
            }
        }
        if total == 0 {
            1.0
        } else {
            known as f64 / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_orders_by_frequency_and_caps() {
        let exs = vec![Example::from_text("a", "Bob bob cat?", "dog Dog dog cat")];
        let v = Vocabulary::build(&exs, 4);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "dog", "bob"]);
        assert_eq!(v.id("DOG"), 2);
        assert_eq!(v.id("cat"), UNK);
        assert_eq!(v.token(PAD), Some("<pad>"));
    }

    #[test]
    fn round_trips_through_token_list() {
        let exs = vec![Example::from_text("a", "Who?", "Ann ran far")];
        let v = Vocabulary::build(&exs, 100);
        let back = Vocabulary::from_tokens(v.tokens().to_vec()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
        assert!(Vocabulary::from_tokens(vec!["x".into()]).is_err());
        assert!(Vocabulary::from_tokens(vec!["<pad>".into(), "<unk>".into(), "a".into(), "a".into()]).is_err());
    }

    #[test]
    fn bijective_over_regular_entries() {
        let exs = vec![Example::from_text("a", "What is Ann's pet?", "Ann's pet is a cat. Bob's pet is a dog.")];
        let v = Vocabulary::build(&exs, 5000);
        for id in 2..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }
}
