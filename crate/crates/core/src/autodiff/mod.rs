//! A small dense-tensor engine with a reverse-mode tape.
//!
//! The op set is exactly what the network needs; there is no general
//! broadcasting. Every op is generic over [`Real`] so the same code runs in
//! 64-bit for gradient checks and 32-bit for training.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled, GradCheckReport};
pub use tape::{Activation, Gradients, PoolAxis, PoolKind, Tape, Var};
pub use tensor::{Real, Tensor};
