//! Paired-multinomial (PairMN) modelling of paired compositional count
//! data: moment model and samplers, the consistent covariance estimator,
//! the asymptotic F-test for equal paired compositions, and the
//! taxonomic-tree pipeline built on it (per-subtree tests, FDR, global
//! p-value combination, K-R distance, paired PERMANOVA), plus a simulation
//! bench for size and power studies.

pub mod error;
pub mod estimate;
pub mod hypothesis;
pub mod io;
pub mod model;
pub mod numkit;
pub mod simbench;
pub mod tree;

pub use error::{Error, Result};
