//! Dense reverse-mode differentiation in `f64`.
//!
//! One [`Tape`] per training step; parameters live in a [`ParamSet`] outside
//! the tape and are re-bound each step.

mod adam;
pub mod checkpoint;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use params::{Bindings, Param, ParamSet};
pub use tape::{Axis, NeighborMean, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;
