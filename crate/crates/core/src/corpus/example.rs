use serde::{Deserialize, Serialize};

use super::tokenize::{char_slice, tokenize};
use crate::error::{Error, Result};

/// Inclusive token range `[start, end]` within a passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn token_count(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn fits(&self, passage_len: usize) -> bool {
        self.start <= self.end && self.end < passage_len
    }
}

/// One tokenized question/passage pair.
///
/// `gold_spans` is empty only for unlabeled (augmentation) examples.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub question_tokens: Vec<String>,
    pub passage_tokens: Vec<String>,
    pub gold_spans: Vec<Span>,
    /// Source answer strings, used for string-level scoring.
    pub answers: Vec<String>,
    pub raw_context: String,
    pub token_char_offsets: Vec<(usize, usize)>,
    /// Set when the passage carries an appended distractor sentence.
    pub adversarial: bool,
}

impl Example {
    /// Builds an example from raw strings, tokenizing both sides.
    pub fn from_text(id: impl Into<String>, question: &str, context: &str) -> Self {
        let q = tokenize(question);
        let p = tokenize(context);
        Self {
            id: id.into(),
            question: question.to_string(),
            question_tokens: q.into_iter().map(|t| t.text).collect(),
            token_char_offsets: p.iter().map(|t| (t.begin, t.end)).collect(),
            passage_tokens: p.into_iter().map(|t| t.text).collect(),
            gold_spans: Vec::new(),
            answers: Vec::new(),
            raw_context: context.to_string(),
            adversarial: false,
        }
    }

    pub fn passage_len(&self) -> usize {
        self.passage_tokens.len()
    }

    pub fn question_len(&self) -> usize {
        self.question_tokens.len()
    }

    pub fn is_labeled(&self) -> bool {
        !self.gold_spans.is_empty()
    }

    /// Original context text covered by `span`.
    pub fn span_text(&self, span: Span) -> &str {
        let begin = self.token_char_offsets[span.start].0;
        let end = self.token_char_offsets[span.end].1;
        char_slice(&self.raw_context, begin, end)
    }

    /// Texts of the gold answers. Falls back to span text when no source
    /// strings were recorded.
    pub fn gold_texts(&self) -> Vec<String> {
        if self.answers.is_empty() {
            self.gold_spans.iter().map(|&s| self.span_text(s).to_string()).collect()
        } else {
            self.answers.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.passage_len();
        if self.question_tokens.is_empty() || m == 0 {
            return Err(Error::Data(format!("example {} has an empty question or passage", self.id)));
        }
        if self.token_char_offsets.len() != m {
            return Err(Error::Data(format!("example {} has {} offsets for {m} tokens", self.id, self.token_char_offsets.len())));
        }
        for w in self.token_char_offsets.windows(2) {
            if w[0].0 >= w[0].1 || w[0].1 > w[1].0 {
                return Err(Error::Data(format!("example {} has overlapping token offsets", self.id)));
            }
        }
        if let Some(bad) = self.gold_spans.iter().find(|s| !s.fits(m)) {
            return Err(Error::Data(format!("example {} has gold span {bad:?} outside passage of {m} tokens", self.id)));
        }
        Ok(())
    }

    /// Copy whose passage is cut to its first `cap` tokens; gold spans that
    /// no longer fit are removed (answer strings are kept for scoring).
    pub fn truncated(&self, cap: usize) -> Example {
        if self.passage_len() <= cap {
            return self.clone();
        }
        let mut out = self.clone();
        out.passage_tokens.truncate(cap);
        out.token_char_offsets.truncate(cap);
        out.gold_spans.retain(|s| s.fits(cap));
        out
    }

    /// Whether every gold span lies within the first `cap` tokens.
    pub fn golds_within(&self, cap: usize) -> bool {
        self.gold_spans.iter().all(|s| s.fits(cap))
    }
}
