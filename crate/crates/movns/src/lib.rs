//! File formats, configuration and orchestration for the moving-domain
//! stochastic Navier-Stokes solver in `movns-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod runner;

pub use error::{AppError, Result};
