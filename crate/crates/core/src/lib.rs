//! Numerical core for the 2D stochastic Navier-Stokes equations on a moving
//! domain, solved through the Piola pull-back to the unit square.
//!
//! The crate is `no_std` with `alloc`; the `std` feature only enables the
//! standard library for downstream convenience.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analytic;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod geometry;
mod krylov;
pub mod math;
pub mod operators;
pub mod oracle;
mod poisson;
pub mod rereference;
pub mod rng;
pub mod sde;
pub mod transform;

pub use error::{Error, Result};
pub use krylov::SolveInfo;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
