//! Bayesian inference for ODE systems from sparse, noisy observations using
//! manifold-constrained Gaussian processes sampled by Hamiltonian Monte Carlo.
//!
//! Layers, bottom up:
//! - [`ode`]: the system abstraction, Lorenz equations and a Dormand–Prince integrator.
//! - [`testbed`]: the four Lorenz regimes and seeded observation sets.
//! - [`gp`]: Matérn kernel, covariance bundles and hyperparameter fitting.
//! - [`hmc`]: leapfrog integration and the HMC sampler.
//! - [`magi`]: the constrained posterior and the single-run solver.
//! - [`pmagi`], [`pmsp`]: pilot-stage inference and sequential prediction.
//! - [`analysis`]: metrics, summaries and the stability classifier.

pub mod analysis;
pub mod error;
pub mod gp;
pub mod hmc;
pub mod magi;
pub mod ode;
pub mod optim;
pub mod pmagi;
pub mod pmsp;
pub mod testbed;

pub use error::{Error, Result};
