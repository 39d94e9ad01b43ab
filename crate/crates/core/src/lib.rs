//! Unadjusted and exact Hamiltonian Monte Carlo with one-shot coupling maps,
//! closed-form Gaussian divergence oracles, and evaluators for the KL and
//! Rényi mixing and bias bounds.

pub mod bounds;
pub mod couplings;
pub mod divergences;
pub mod dynamics;
pub mod error;
pub mod gaussian;
pub mod kernels;
pub mod ode;
pub mod potential;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
