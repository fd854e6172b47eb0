//! Dense tensors, the reverse-mode tape, AdamW and the finite-difference
//! gradient checker.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{compare_with_central_differences, finite_diff_check, GradCheckReport};
pub use optim::{adamw_step, AdamWParams, OptimState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{gelu_scalar, softmax, Scalar, Tensor};
