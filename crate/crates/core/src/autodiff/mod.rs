//! Minimal reverse-mode automatic differentiation.
//!
//! Only the operators the estimator, the discriminator and the training
//! losses need are provided. Tensors are `f64` and at most rank 3.

mod checkpoint;
mod conv;
mod energy;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use energy::EdrBasis;
pub use optim::{clip_global_norm, global_norm, RmsProp};
pub use tape::{BnMode, Gradients, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;

#[cfg(test)]
mod gradcheck;
