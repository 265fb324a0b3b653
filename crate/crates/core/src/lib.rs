//! Robustness-and-sharpness toolkit for out-of-distribution generalization.
//!
//! The crate trains small analytic models (ridge regression, random-feature
//! ReLU heads, diagonal linear networks), measures their sharpness and
//! empirical robustness over a random-projection partition of the input
//! space, and evaluates the robust OOD bound next to two baselines.
//!
//! Modules map onto the pipeline:
//!
//! - [`datasets`]: synthetic source/target generators and group scoring
//! - [`models`]: the three model families and their trainers
//! - [`sharpness`]: analytic sharpness, finite-difference trace oracle, n′
//! - [`robustness`]: partition, cell counts, TV distance, empirical ε
//! - [`bounds`]: robust bound, sharpness RHS, Zhao and PAC-Bayes baselines
//! - [`harness`]: experiment runners, config, CSV/JSON artifacts, CLI

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod datasets;
mod error;
pub mod harness;
pub mod models;
pub mod rng;
pub mod robustness;
pub mod sharpness;

pub use error::{Error, Result};
