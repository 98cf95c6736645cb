//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] then
//! walks the records in reverse to produce gradients for every leaf. Model
//! parameters live in a [`ParamStore`] and enter a tape through
//! [`Tape::param`], which hands out one node per parameter so that shared
//! weights accumulate their gradients in place.

pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use ops::{sigmoid, sum_to_shape, ConvGeometry};
pub use params::{ParamId, ParamStore};
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::{gemm, Tensor};
