//! Distillation losses, confusing-answer mining, ensemble aggregation, and
//! the distilled dataset file.

mod annotation;
mod config;
mod losses;
mod mining;

pub use annotation::{aggregate_ensemble, annotate_member, read_distilled, write_distilled, TeacherAnnotation};
pub use config::{DistillConfig, TAU_GRID};
pub use losses::{
    ans_value, att_value, ce_from_probs, ce_value, joint_graph, kd_value, loss_ans, loss_att, loss_ce, loss_joint,
    loss_kd, LossTerms, TARGET_SUM_TOL,
};
pub use mining::{disjoint_from_golds, mine_confusing, mine_member, most_confident, MinedSpan};
