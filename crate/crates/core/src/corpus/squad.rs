//! SQuAD v1.1 JSON reading and writing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::example::{Example, Span};
use super::tokenize::tokenize;
use crate::decode_eval::normalize_answer;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct SquadFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
    data: Vec<Article>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Article {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    title: Option<String>,
    paragraphs: Vec<Paragraph>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Qa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<Answer>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    is_adversarial: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Answer {
    text: String,
    answer_start: usize,
}

/// Bookkeeping from a load: what was read and what had to be dropped.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub questions: usize,
    pub examples: usize,
    /// Answers whose offsets fall outside the context.
    pub out_of_range_answers: usize,
    /// Answers whose covering tokens do not normalize to the answer text.
    pub misaligned_answers: usize,
    /// Questions with answers, none of which could be aligned.
    pub skipped_examples: usize,
    /// Questions with no answers at all (kept as unlabeled examples).
    pub unlabeled: usize,
}

/// Byte offset of a `line`/`column` position (both 1-based) in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// Maps a character range onto the tokens overlapping it.
fn align(offsets: &[(usize, usize)], begin: usize, end: usize) -> Option<Span> {
    let start = offsets.iter().position(|&(_, e)| e > begin)?;
    let last = offsets.iter().rposition(|&(b, _)| b < end)?;
    (start <= last).then(|| Span::new(start, last))
}

pub fn parse_squad_json(text: &str, origin: &Path) -> Result<(Vec<Example>, LoadReport)> {
    let file: SquadFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let mut report = LoadReport::default();
    let mut examples = Vec::new();
    for article in &file.data {
        for para in &article.paragraphs {
            let tokens = tokenize(&para.context);
            let offsets: Vec<(usize, usize)> = tokens.iter().map(|t| (t.begin, t.end)).collect();
            let passage: Vec<String> = tokens.into_iter().map(|t| t.text).collect();
            let context_chars = para.context.chars().count();
            for qa in &para.qas {
                report.questions += 1;
                let question_tokens: Vec<String> = tokenize(&qa.question).into_iter().map(|t| t.text).collect();
                let mut ex = Example {
                    id: qa.id.clone(),
                    question: qa.question.clone(),
                    question_tokens,
                    passage_tokens: passage.clone(),
                    gold_spans: Vec::new(),
                    answers: Vec::new(),
                    raw_context: para.context.clone(),
                    token_char_offsets: offsets.clone(),
                    adversarial: qa.is_adversarial,
                };
                if ex.question_tokens.is_empty() || ex.passage_tokens.is_empty() {
                    report.skipped_examples += 1;
                    continue;
                }
                for ans in &qa.answers {
                    let len = ans.text.chars().count();
                    let end = ans.answer_start + len;
                    if len == 0 || end > context_chars {
                        report.out_of_range_answers += 1;
                        continue;
                    }
                    let Some(span) = align(&offsets, ans.answer_start, end) else {
                        report.misaligned_answers += 1;
                        continue;
                    };
                    if normalize_answer(ex.span_text(span)) != normalize_answer(&ans.text) {
                        report.misaligned_answers += 1;
                        continue;
                    }
                    if !ex.gold_spans.contains(&span) {
                        ex.gold_spans.push(span);
                    }
                    ex.answers.push(ans.text.clone());
                }
                if qa.answers.is_empty() {
                    report.unlabeled += 1;
                } else if ex.gold_spans.is_empty() {
                    report.skipped_examples += 1;
                    continue;
                }
                examples.push(ex);
            }
        }
    }
    report.examples = examples.len();
    Ok((examples, report))
}

/// Loads a SQuAD v1.1 file, logging how many answers were dropped.
pub fn load_squad_json(path: &Path) -> Result<Vec<Example>> {
    load_squad_json_with_report(path).map(|(examples, _)| examples)
}

pub fn load_squad_json_with_report(path: &Path) -> Result<(Vec<Example>, LoadReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (examples, report) = parse_squad_json(&text, path)?;
    let dropped = report.out_of_range_answers + report.misaligned_answers;
    if dropped > 0 || report.skipped_examples > 0 {
        log::warn!(
            "{}: dropped {dropped} unmappable answers ({} out of range, {} misaligned), skipped {} questions",
            path.display(),
            report.out_of_range_answers,
            report.misaligned_answers,
            report.skipped_examples
        );
    }
    Ok((examples, report))
}

/// Serializes examples as SQuAD v1.1 JSON. Consecutive examples sharing a
/// context become one paragraph. Answers are written from the gold spans.
pub fn to_squad_json(examples: &[Example]) -> Result<String> {
    let mut paragraphs: Vec<Paragraph> = Vec::new();
    for ex in examples {
        let qa = Qa {
            id: ex.id.clone(),
            question: ex.question.clone(),
            answers: ex
                .gold_spans
                .iter()
                .map(|&s| Answer {
                    text: ex.span_text(s).to_string(),
                    answer_start: ex.token_char_offsets[s.start].0,
                })
                .collect(),
            is_adversarial: ex.adversarial,
        };
        match paragraphs.last_mut() {
            Some(p) if p.context == ex.raw_context => p.qas.push(qa),
            _ => paragraphs.push(Paragraph {
                context: ex.raw_context.clone(),
                qas: vec![qa],
            }),
        }
    }
    let file = SquadFile {
        version: Some("1.1".into()),
        data: vec![Article {
            title: None,
            paragraphs,
        }],
    };
    serde_json::to_string(&file).map_err(|e| Error::Internal(e.to_string()))
}

pub fn write_squad_json(path: &Path, examples: &[Example]) -> Result<()> {
    let text = to_squad_json(examples)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
