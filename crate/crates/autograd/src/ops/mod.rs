//! Differentiable operations on [`Var`](crate::Var).
//!
//! Shape violations are programmer errors and panic; user-input validation
//! belongs to the layers above.

mod basic;
mod conv;
mod linear;
mod loss;
mod norm;
