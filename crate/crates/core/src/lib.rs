//! Bayesian accelerated failure time models for progressive three-state
//! screening data with interval censoring.

pub mod cif;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod em;
pub mod error;
pub mod exec;
pub mod gibbs;
pub mod model;
pub mod modelsel;
pub mod quadrature;
pub mod rng;
pub mod simulate;
pub mod special;

pub use dist::{Family, LinearPredictor};
pub use error::{Error, Result};
pub use exec::Execution;
