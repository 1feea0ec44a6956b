//! Dense tensors with reverse-mode differentiation.
//!
//! The engine covers exactly the kernels the forecaster needs. Values are
//! `f64` throughout and stored row-major. A [`Tape`] records each primitive
//! as it runs; [`Tape::backward`] replays the record in reverse.

mod adam;
mod kernels;
mod schedule;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use schedule::LrSchedule;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
