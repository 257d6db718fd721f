//! Pilot MAGI: fit `(phi, sigma)` on a short prefix, then run the full interval
//! with those values held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::KernelHyper;
use crate::magi::{discretize, magi_solver, PosteriorSamples, SolverSettings};
use crate::ode::OdeSystem;
use crate::testbed::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSettings {
    /// Pilot prefix length; 0 disables the pilot.
    pub t_max_pilot: f64,
    pub d_pilot: u32,
    pub n_hmc_pilot: usize,
    pub n_hmc_main: usize,
    /// Discretization level of the main run.
    pub d_main: u32,
}

impl Default for PilotSettings {
    fn default() -> Self {
        PilotSettings {
            t_max_pilot: 1.0,
            d_pilot: 0,
            n_hmc_pilot: 4001,
            n_hmc_main: 16001,
            d_main: 0,
        }
    }
}

/// `log2(40 / d_obs)` for the supported densities `{5, 10, 20, 40}`.
pub fn default_discretization(d_obs: f64) -> Result<u32> {
    match d_obs {
        v if v == 40.0 => Ok(0),
        v if v == 20.0 => Ok(1),
        v if v == 10.0 => Ok(2),
        v if v == 5.0 => Ok(3),
        _ => Err(Error::UnsupportedDensity(d_obs)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimate {
    pub phi: Vec<KernelHyper>,
    pub sigma: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmagiOutput {
    pub pilot: Option<PosteriorSamples>,
    pub estimate: Option<PilotEstimate>,
    pub main: PosteriorSamples,
}

/// Seed of the main stage, distinct from the pilot's.
pub(crate) fn main_seed(seed: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15)
}

/// Runs the pilot stage on `t <= t_max_pilot` and returns its estimates.
pub fn run_pilot(
    obs: &ObservationSet,
    system: &dyn OdeSystem,
    t_max_pilot: f64,
    level: u32,
    n_hmc: usize,
    solver: &SolverSettings,
) -> Result<(PosteriorSamples, PilotEstimate)> {
    run_pilot_window(obs, system, f64::NEG_INFINITY, t_max_pilot, level, n_hmc, solver)
}

/// Pilot stage on the rows with `t_start <= t <= t_end`, fitting `phi` and `sigma`
/// jointly. Needs at least 3 observed values per component.
pub fn run_pilot_window(
    obs: &ObservationSet,
    system: &dyn OdeSystem,
    t_start: f64,
    t_end: f64,
    level: u32,
    n_hmc: usize,
    solver: &SolverSettings,
) -> Result<(PosteriorSamples, PilotEstimate)> {
    let sub = obs.restrict_window(t_start, t_end);
    let min_obs = (0..sub.dim())
        .map(|c| sub.observed(c).0.len())
        .min()
        .unwrap_or(0);
    if sub.len() < 3 || min_obs < 3 {
        return Err(Error::PilotTooShort {
            t_pilot: t_end - t_start.max(obs.times.first().copied().unwrap_or(0.0)),
            found: min_obs.min(sub.len()),
        });
    }
    let grid = discretize(&sub.times, level)?;
    let settings = SolverSettings {
        n_hmc,
        phi: None,
        sigma: None,
        x_init: None,
        ..solver.clone()
    };
    let samples = magi_solver(&sub, &grid, system, &settings)?;
    let estimate = PilotEstimate {
        phi: samples.phi.clone(),
        sigma: samples.sigma_mean(),
        theta: samples.theta_mean(),
    };
    Ok((samples, estimate))
}

/// Two-stage pilot MAGI. With `t_max_pilot == 0` this is a single MAGI run with
/// fitted hyperparameters.
///
/// The main run starts `theta` from the pilot's posterior mean unless
/// `solver.theta_init` is set.
pub fn pmagi(
    obs: &ObservationSet,
    system: &dyn OdeSystem,
    pilot: &PilotSettings,
    solver: &SolverSettings,
) -> Result<PmagiOutput> {
    if !(pilot.t_max_pilot >= 0.0) {
        return Err(Error::InvalidArgument("pilot length must be >= 0".into()));
    }
    let grid = discretize(&obs.times, pilot.d_main)?;
    if pilot.t_max_pilot == 0.0 {
        let settings = SolverSettings {
            n_hmc: pilot.n_hmc_main,
            ..solver.clone()
        };
        let main = magi_solver(obs, &grid, system, &settings)?;
        return Ok(PmagiOutput {
            pilot: None,
            estimate: None,
            main,
        });
    }

    let (pilot_samples, estimate) = run_pilot(
        obs,
        system,
        pilot.t_max_pilot,
        pilot.d_pilot,
        pilot.n_hmc_pilot,
        solver,
    )?;
    let settings = SolverSettings {
        n_hmc: pilot.n_hmc_main,
        phi: Some(estimate.phi.clone()),
        sigma: Some(estimate.sigma.clone()),
        theta_init: solver
            .theta_init
            .clone()
            .or_else(|| Some(estimate.theta.clone())),
        seed: main_seed(solver.seed),
        ..solver.clone()
    };
    let main = magi_solver(obs, &grid, system, &settings)?;
    Ok(PmagiOutput {
        pilot: Some(pilot_samples),
        estimate: Some(estimate),
        main,
    })
}
