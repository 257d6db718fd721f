//! Manifold-constrained GP inference: grids, the posterior, and the solver.

pub mod grid;
pub mod posterior;
pub mod solver;

pub use grid::{discretize, DiscretizedGrid};
pub use posterior::{MagiPosterior, MagiState, NoiseModel, PosteriorTerms, ThetaPrior};
pub use solver::{magi_solver, PosteriorSamples, SolverSettings};
