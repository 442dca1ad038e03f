//! Matrix-free solver library for composite problems min h(F(x)), where h is
//! a convex (possibly nonsmooth) loss over linear measurements and F is a
//! smooth low-rank parameterization. The core method preconditions
//! subgradient steps by the damped Gauss-Newton system
//! (∇F(x)ᵀ∇F(x) + λI)⁻¹, which keeps convergence fast even when F loses
//! rank at the solution (overparameterized factorizations).
//!
//! The crate also ships the experiment harness behind the `lmm` binary:
//! single-run traces, outlier phase-transition grids, stepsize-sensitivity
//! grids, and a verification suite for the structural claims (Jacobian
//! spectra, constant ranks, alignment probes).

pub mod error;
pub mod experiments;
pub mod losses;
pub mod operators;
pub mod par;
pub mod params;
pub mod problems;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
