//! Monte Carlo simulation of the Brownian snails SIR model.
//!
//! Particles start as a Poisson field plus one infected particle at the
//! origin, move as independent Brownian motions, infect susceptible particles
//! within a fixed radius instantly (and through chains of such contacts), and
//! are removed after exponential lifetimes.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod kernel;
pub mod model;
pub mod neighbor;
pub mod observables;
pub mod parallel;
pub mod stats;

pub use error::{Error, Result};
