//! Training toolkit for ordinal fundus-image grading.
//!
//! The crate packages everything a grading recipe touches: a small exact-math
//! tensor core, a CNN backbone with hand-derived gradients, the
//! quadratically-weighted Kappa metric, classification and regression
//! objectives, learning-rate schedules, balanced samplers, fundus
//! preprocessing and augmentation, paired-eye feature fusion, and prediction
//! ensembling, driven by a config-hashed experiment harness.

pub mod error;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{BinOp, Tensor};
