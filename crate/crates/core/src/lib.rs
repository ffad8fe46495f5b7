//! Cross-fit and doubly cross-fit doubly robust estimation of average linear
//! functionals of a conditional expectation, with series (b-spline) first
//! steps and a Monte Carlo laboratory.

pub mod basis;
pub mod cli_io;
pub mod data;
pub mod error;
pub mod estimators;
pub mod functionals;
pub mod linreg;
pub mod rng;
pub mod simlab;
pub mod splitting;

pub use error::{Error, Result};
