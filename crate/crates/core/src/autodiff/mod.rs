//! Reverse-mode automatic differentiation over `f64` tensors, plus the
//! optimizers used for training.

mod optim;
mod tape;
mod tensor;

pub use optim::{Optimizer, OptimizerKind, StepLr};
pub use tape::{Tape, Var};
pub use tensor::Tensor;


