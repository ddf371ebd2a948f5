//! Quantile-regression ensembles, a quantile-ratio feature and a
//! transformer classifier for predicting machine breakdowns from plant
//! sensor streams, plus a synthetic plant simulator and evaluation harness.

pub mod archive;
pub mod config;
pub mod error;
pub mod eval;
pub mod feature;
pub mod nn;
pub mod pipeline;
pub mod plantsim;
pub mod qrnn;
pub mod rng;
pub mod transformer;

pub use error::{Error, Result};
