//! Tensors, reverse-mode differentiation, layer primitives and optimization.

mod gradcheck;
mod layers;
mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_fn, GradcheckReport, Objective, TapeFn, DEFAULT_STEP};
pub use layers::{dropout, BatchNorm1d, Mode, BN_EPS, BN_MOMENTUM};
pub use optim::{adam_step, AdamState, LrSchedule, DEFAULT_LR, LR_DECAY_EVERY, LR_DECAY_FACTOR};
pub use params::{Param, ParamId, ParamKind, ParamStore};
pub use scalar::Scalar;
pub use tape::{sigmoid, softmax_slice, BatchStats, Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
