//! Gaussian-process machinery: Bessel functions, the Matérn kernel, covariance
//! bundles on a grid, and hyperparameter fitting.

pub mod bessel;
pub mod bundle;
pub mod fit;
pub mod kernel;

pub use bundle::{build_bundle, factor_with_jitter, KernelBundle, JITTER_LADDER};
pub use fit::{fit_phi_given_sigma, fit_phi_sigma, gp_marginal_loglik, GpFit};
pub use kernel::{matern_derivatives, matern_k, KernelHyper, Matern, MATERN_NU};
