//! Full-data differentially private conformal prediction.
//!
//! The crate trains a model once with DP-SGD on the whole dataset, scores the
//! same data, and releases a conservative threshold through a buffered noisy
//! binary search. Privacy of both stages is tracked with an RDP accountant.

// Float checks are written as `!(x > 0.0)` on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conformal;
pub mod data;
pub mod error;
pub mod harness;
pub mod normal;
pub mod privacy;
pub mod quantile;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
