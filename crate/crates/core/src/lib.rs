//! Reliability scoring of reported labels against indirect observations
//! with the Gram determinant score and its estimators.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod ingest;
pub mod kernels;
pub mod matcore;
pub mod results;
pub mod scoring;
pub mod seeds;
pub mod simulate;

pub use error::{Error, Result};
