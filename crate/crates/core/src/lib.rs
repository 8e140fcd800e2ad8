//! Stochastic 2-D Navier–Stokes on the periodic torus: Ornstein–Uhlenbeck
//! conjugation, completeness defects of functional families, the closed-form
//! sufficient conditions for determining functionals in probability, and the
//! Monte Carlo machinery that checks them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod functionals;
pub mod noise;
pub mod rds;
pub mod spectral;
pub mod verifier;

pub use error::{Error, Result};
