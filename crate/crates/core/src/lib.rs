//! Performance models for configurable systems learned with Gaussian
//! processes, with transfer from a cheap correlated source environment.

pub mod adapt;
pub mod cli;
pub mod config_space;
pub mod cost;
pub mod datasets;
pub mod error;
pub mod gp;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod optimize;
pub mod recipes;
pub mod rng;
pub mod synthetic;
pub mod transfer;

pub use error::{Error, Result};
