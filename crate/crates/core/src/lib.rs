//! SWAP-test quantum neural networks with generalized product layers.
//!
//! The crate is organized bottom-up:
//!
//! - [`encoding`]: amplitude encoding, dummy-feature bias and the closed-form
//!   SWAP-test probability.
//! - [`circuit`]: an exact real-amplitude statevector simulator of the SWAP test
//!   and of the generalized product-module circuit, plus finite-shot sampling.
//! - [`model`]: the trainable two-layer network (classical surrogate) and its
//!   analytic gradients.
//! - [`training`]: BCE-with-logits, Adam, early stopping, cross-validation.
//! - [`datasets`]: parity and n-spiral generators, CSV ingestion, feature
//!   partitioning.
//! - [`theory`]: enumeration-based checks of the parity-check impossibility
//!   argument for the quadratic (k = 1) architecture.
//! - [`verify`] and [`experiments`]: reusable verification suites and the
//!   experiment runners behind the `swapqnn` CLI.

pub mod circuit;
pub mod datasets;
pub mod encoding;
pub mod error;
pub mod experiments;
pub mod model;
pub mod seed;
pub mod theory;
pub mod training;
pub mod verify;

pub use error::{Error, Result};

/// Library version recorded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
