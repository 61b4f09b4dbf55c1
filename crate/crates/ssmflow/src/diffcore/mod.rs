//! Differentiable computation engine.
//!
//! Supplies the tensor operations the flows are built from — off-centre
//! convolutions, dense and masked dense layers, activations, channel
//! normalisation — with reverse-mode gradients recorded on a [`Tape`] and
//! verified against finite differences.

mod check;
mod checkpoint;
mod store;
mod tape;
mod tensor;

pub use check::{finite_diff_check, rel_err};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use store::{GradMap, ParameterStore, STAT_EMA_MOMENTUM};
pub use tape::{Activation, BatchStats, NormMode, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
