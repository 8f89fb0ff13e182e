//! Probabilistic-circuit generative models for heterogeneous tabular data.
//!
//! The crate trains fully-factorized, shallow-mixture, and tree-structured
//! deep circuit models on mixed numerical/categorical tables, draws
//! unconditional or exactly-conditioned synthetic rows, and scores synthetic
//! data with a fidelity/utility/privacy metric suite built around
//! rank-invariant mutual-information similarity and classifier two-sample
//! tests with a boosted-tree discriminator.
//!
//! Pipeline overview:
//!
//! 1. [`dataset`] loads CSVs against a JSON schema (or infers one) and
//!    provides deterministic splits.
//! 2. [`preprocess`] imputes missing values, indicator-encodes inflated
//!    values, dequantizes gridded columns, and quantile-normalizes numerical
//!    columns, all invertibly.
//! 3. [`structure`] learns a Chow-Liu tree over the columns, compiles it into
//!    a region graph, and instantiates an overparameterized circuit.
//! 4. [`train`] fits parameters by rectified-adaptive-moment gradient ascent
//!    on the exact log-likelihood.
//! 5. [`sample`] draws rows ancestrally or conditions exactly on any evidence
//!    subset, then maps samples back to raw data space.
//! 6. [`metrics`] scores synthetic tables; [`classify`] houses the logistic
//!    and gradient-boosted-tree discriminators behind the two-sample tests.

pub mod circuit;
pub mod classify;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod sample;
pub mod structure;
pub mod train;

pub use error::{Error, Result};
