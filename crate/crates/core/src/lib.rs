//! Joint Bayesian imputation of misaligned, irregularly sampled proxy
//! records modelled as a correlated random walk observed with noise.

pub mod calibration;
pub mod error;
pub mod fmt;
pub mod gmrf;
pub mod imputation;
pub mod inference;
pub mod modelsel;
pub mod ingest;
pub mod paths;
pub mod pipeline;
pub mod rng;
pub mod stats;
pub mod variogram;

pub use error::{Error, Result};
