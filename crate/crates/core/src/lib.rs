//! Encoder-based GAN inversion for clean and degraded images, trained by
//! unsupervised domain adaptation with a variational f-divergence
//! discrepancy.
//!
//! The generator is a frozen procedural renderer, so every inversion has a
//! known ground truth. Networks are small perceptrons over flattened 16×16
//! grayscale images and all arithmetic is `f64`.

// `!(x > 0.0)` is used on purpose so NaN is rejected with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod editctl;
pub mod error;
pub mod exec;
pub mod fdiv;
pub mod metrics;
pub mod nets;
pub mod synthdeg;
pub mod uda;

pub use error::{Error, Result};
pub use exec::Exec;
