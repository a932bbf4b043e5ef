//! Dense arrays, a reverse-mode tape, and finite-difference gradient checks.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled, relative_error, CoordMismatch, GradCheckReport, ParamCheck};
pub use kernels::{entropy, kl_divergence, log_softmax_temp, softmax_temp, MASK_LOGIT};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
