//! Dense matrices, a scalar reverse-mode tape, Adam, and finite differences.

mod matrix;
mod optim;
mod tape;

pub use matrix::{matmul, Matrix};
pub(crate) use matrix::{matmul_into, matmul_nt, matmul_tn};
pub use optim::{adam_step, check_finite, finite_diff_grad, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{sigmoid, GradTape, Var};
