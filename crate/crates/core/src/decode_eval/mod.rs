//! Span decoding, answer normalization, overlap F1, and corpus metrics.

mod decode;
mod evaluate;
mod normalize;

pub use decode::{best_span, decode_topk, rank_order, topk_spans, SpanPrediction};
pub use evaluate::{
    evaluate, question_type, read_predictions, score_answer, write_predictions, BucketScore, EvalReport, Predictions,
    QUESTION_TYPES,
};
pub use normalize::{exact_match, normalize_answer, overlap_f1};
