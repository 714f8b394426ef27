//! Spectral-Galerkin simulation of the 2D stochastic Navier-Stokes equations
//! with multiplicative noise, plus a Monte Carlo laboratory for the moment
//! functionals that govern Galerkin convergence in the V and H norms.
//!
//! Layout:
//! - [`spectral`]: Stokes eigenbases on the periodic torus and the no-slip square,
//!   spectral fields, norms, projection and reconstruction, basis files.
//! - [`nonlinear`]: the advection term `B(u, v)` and its cancellation checks.
//! - [`noise`]: cylindrical Wiener increments, noise coefficient families and
//!   stochastic-calculus checkers.
//! - [`integrator`]: semi-implicit Euler-Maruyama for the Galerkin system,
//!   coupled multilevel runs and stopping-time diagnostics.
//! - [`moments`]: moment functionals, Monte Carlo estimation and the studies.
//! - [`config`] / [`cli`]: the `snse` experiment front end.

pub mod cli;
pub mod config;
pub mod error;
pub mod integrator;
pub mod moments;
pub mod noise;
pub mod nonlinear;
pub mod scenario;
pub mod spectral;

pub use error::{Error, Result};
