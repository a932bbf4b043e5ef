//! The training procedure end to end: teacher ensemble, annotation,
//! distilled dataset, student; plus evaluation, benchmarking, and the
//! configuration and manifest formats.

mod config;
mod gradsuite;
mod manifest;
mod steps;
mod trainer;
mod workflow;

pub use config::TrainConfig;
pub use gradsuite::{gradient_suite, SuiteEntry, SUITE_EPS, SUITE_TOL};
pub use manifest::{file_hash, ManifestEntry, RunManifest};
pub use steps::{
    load_corpus, load_ensemble, render_report, step_annotate, step_bench, step_eval, step_gen, step_train_student,
    step_train_teacher, student_path, teacher_path, AnnotateSummary, MANIFEST,
};
pub use trainer::{
    accumulate_sample, clip_global_norm, evaluate_params, fit, predict, Adam, DevSet, EpochRecord, Phase, Sample,
    TrainOutcome,
};
pub use workflow::{
    annotate, bench, build_vocab, check_vocab, ensemble_predict, eval_params, median, reader_dims, train_baseline,
    train_ce, train_student, train_teacher_ensemble, within_cap, Annotated, BenchReport, MIN_COVERAGE,
};
