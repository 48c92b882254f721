//! Split knockoffs for false-discovery-rate controlled selection of
//! structurally sparse signals `gamma = D beta` in linear regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`] holds the dense linear-algebra and proximal primitives.
//! * [`augment`] lifts `(y, X, D)` into the split system and builds the
//!   split knockoff copy.
//! * [`path`] solves the split LASSO regularization path and derives the
//!   feature / knockoff significance statistics.
//! * [`filter`] turns significance statistics into `W`, thresholds and a
//!   selected set.
//! * [`baseline`] is the classical fixed-design knockoff on the reduced
//!   generalized-LASSO problem, used for comparison.
//! * [`experiments`] covers data generation, the Monte Carlo harness,
//!   cross-validation over `nu`, diagnostics and file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod baseline;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod numerics;
pub mod path;

pub use error::{Result, SkfError};
pub use numerics::{Matrix, Tolerances, Vector};
