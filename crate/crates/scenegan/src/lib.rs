//! Compound generative model for unsupervised conditional image generation,
//! foreground segmentation, two-level clustering, and object removal.
//!
//! The crate is organized around the life of a training run: `config` and
//! `rng` pin down a reproducible setup, `priors`/`blocks`/`networks` define
//! the model, `paths` composes the forward pipelines, `losses` scores them,
//! `training` schedules the phases, `data` feeds batches, `eval` measures the
//! result, and `checkpoint` makes all of it resumable.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod networks;
pub mod paths;
pub mod priors;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
