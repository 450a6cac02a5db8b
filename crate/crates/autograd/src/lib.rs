//! Minimal reverse-mode automatic differentiation on dense CPU tensors.
//!
//! The crate provides exactly what the model stack above it needs and nothing
//! more: an NCHW `Tensor` backed by a shared flat buffer, a per-step [`Tape`]
//! that records operations, [`Var`] handles that build the graph, named
//! [`Param`] leaves with an [`Adam`] optimizer, and a finite-difference
//! helper for gradient testing.
//!
//! Everything is generic over [`Elem`] so the same graph code runs in `f32`
//! for training and in `f64` for gradient checks. All parallel code paths
//! write disjoint outputs or reduce in a fixed order, so results are
//! bit-for-bit reproducible across runs on the same machine.

mod adam;
mod elem;
mod gradcheck;
mod param;
mod tape;
mod tensor;

pub mod ops;

pub use adam::Adam;
pub use elem::Elem;
pub use gradcheck::{max_rel_err, numeric_gradient};
pub use param::{Param, ParamSet};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
