//! Exponential-polynomial-trigonometric asymptotics of affine stochastic
//! Volterra and finite-delay differential equations.
//!
//! The crate computes characteristic roots and Laurent residue matrices of
//! the driving measure, decomposes the deterministic resolvent into a
//! closed-form leading part and a remainder with fitted growth rates,
//! simulates sample paths under seeded Brownian drivers, and verifies the
//! Gaussian limit laws by Monte Carlo against independently computed
//! quadrature oracles.

pub mod admissibility;
pub mod charspec;
pub mod error;
pub mod expr;
pub mod fixtures;
pub mod limits;
pub(crate) mod lift;
pub mod measures;
pub mod numeric;
pub mod par;
pub mod pathsim;
pub mod resolvent;
pub mod timefn;

pub use error::{Error, Result};
