//! Simultaneous inference for high-dimensional sparse linear models.
//!
//! The pipeline is: [`dataset::standardize`] the design, fit the main
//! estimator with [`solvers::scaled_lasso_fit`], build an approximate inverse
//! of the Gram matrix with [`nodewise::precision_estimate`], de-bias with
//! [`desparsify::desparsify`], and calibrate max-type statistics with the
//! multiplier bootstrap in [`bootstrap`]. The [`procedures`] module layers
//! support recovery, screening-based sparse testing and step-down multiple
//! testing on top; [`glm`] extends the de-biasing to convex losses and
//! [`sim`] runs the Monte Carlo designs used to validate all of it.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod dataset;
pub mod desparsify;
pub mod error;
pub mod glm;
pub mod nodewise;
pub mod procedures;
pub mod rng;
pub mod sim;
pub mod solvers;
pub mod special;
#[cfg(test)]
mod test_support;

pub use dataset::{standardize, Dataset};
pub use error::{Error, Result};

/// Library version embedded in every artifact's provenance header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
