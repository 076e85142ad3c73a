//! Fermionic pieces model: Poisson-fragmented interval, finite-range pair
//! repulsion, chain decomposition and greedy ground states.
//!
//! Closed-form helpers (free levels, thresholds, the free integrated density
//! of states) are generic over [`scalar::Real`]; eigen-solves, quadrature and
//! the Monte Carlo pipeline run in `f64`.

// `!(x > 0.0)` style guards are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chains;
pub mod cli;
pub mod densities;
pub mod disorder;
pub mod error;
pub mod optimizer;
pub mod quad;
pub mod scalar;
pub mod spectra;
pub mod thermo;

pub use error::{Error, Result};
