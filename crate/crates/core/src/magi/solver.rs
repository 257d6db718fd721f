//! Single MAGI run: hyperparameters, bundles, initialization, HMC.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::DiscretizedGrid;
use super::posterior::{observations_on_grid, MagiPosterior, NoiseModel, ThetaPrior};
use crate::error::{Error, Result};
use crate::gp::{build_bundle, fit_phi_given_sigma, fit_phi_sigma, KernelHyper};
use crate::hmc::{hmc_sample, HmcSettings};
use crate::ode::{OdeSystem, Trajectory};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::testbed::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// HMC chain length including the initial state.
    pub n_hmc: usize,
    pub burn_in_ratio: f64,
    pub leapfrog_steps: usize,
    pub step_size: Option<f64>,
    pub target_accept: f64,
    pub adapt_mass: bool,
    pub step_jitter: f64,
    /// `None` uses [`ThetaPrior::default_for`].
    pub prior: Option<ThetaPrior>,
    /// Exogenous kernel hyperparameters, one per component. Requires `sigma`.
    pub phi: Option<Vec<KernelHyper>>,
    /// Exogenous noise levels; when absent sigma is sampled.
    pub sigma: Option<Vec<f64>>,
    /// Warm start for `X` on `tau_inf`, column-major by component.
    pub x_init: Option<Vec<f64>>,
    pub theta_init: Option<Vec<f64>>,
    /// Refine the initial `theta` by maximizing the posterior with `X` held fixed.
    pub optimize_theta_init: bool,
    /// Divides the GP-prior and ODE terms.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            n_hmc: 16001,
            burn_in_ratio: 0.5,
            leapfrog_steps: 20,
            step_size: None,
            target_accept: 0.75,
            adapt_mass: true,
            step_jitter: 0.1,
            prior: None,
            phi: None,
            sigma: None,
            x_init: None,
            theta_init: None,
            optimize_theta_init: true,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Kept draws and run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub grid: DiscretizedGrid,
    pub component_names: Vec<String>,
    pub param_names: Vec<String>,
    /// Each draw is `n x d`, column-major by component.
    pub x_draws: Vec<f64>,
    pub theta_draws: Vec<f64>,
    /// Per-draw noise levels (constant when exogenous).
    pub sigma_draws: Vec<f64>,
    pub phi: Vec<KernelHyper>,
    /// Exogenous noise levels, or the fitted starting values when sigma was sampled.
    pub sigma_init: Vec<f64>,
    pub sigma_sampled: bool,
    pub means: Vec<f64>,
    pub log_density: Vec<f64>,
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
    pub n_hmc: usize,
    pub burn_in_ratio: f64,
    /// `(C jitter, K jitter)` per component.
    pub jitter: Vec<(f64, f64)>,
    /// Manifold discrepancy at the posterior-mean `(X, theta)`.
    pub discrepancy: f64,
}

impl PosteriorSamples {
    pub fn n_kept(&self) -> usize {
        self.log_density.len()
    }

    pub fn dim(&self) -> usize {
        self.component_names.len()
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    pub fn x_draw(&self, k: usize) -> &[f64] {
        let w = self.n_grid() * self.dim();
        &self.x_draws[k * w..(k + 1) * w]
    }

    pub fn theta_draw(&self, k: usize) -> &[f64] {
        let p = self.n_params();
        &self.theta_draws[k * p..(k + 1) * p]
    }

    pub fn sigma_draw(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.sigma_draws[k * d..(k + 1) * d]
    }

    fn column_mean(data: &[f64], width: usize, rows: usize) -> Vec<f64> {
        let mut m = vec![0.0; width];
        for r in 0..rows {
            for (a, b) in m.iter_mut().zip(&data[r * width..(r + 1) * width]) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= rows as f64);
        m
    }

    pub fn x_mean(&self) -> Vec<f64> {
        Self::column_mean(&self.x_draws, self.n_grid() * self.dim(), self.n_kept())
    }

    pub fn theta_mean(&self) -> Vec<f64> {
        Self::column_mean(&self.theta_draws, self.n_params(), self.n_kept())
    }

    pub fn sigma_mean(&self) -> Vec<f64> {
        Self::column_mean(&self.sigma_draws, self.dim(), self.n_kept())
    }

    pub fn last_x(&self) -> &[f64] {
        self.x_draw(self.n_kept() - 1)
    }

    pub fn last_theta(&self) -> &[f64] {
        self.theta_draw(self.n_kept() - 1)
    }

    /// Posterior-mean trajectory on `tau_inf`.
    pub fn mean_trajectory(&self) -> Trajectory {
        column_major_to_trajectory(&self.grid.tau_inf, self.dim(), &self.x_mean())
    }

    /// One row per kept draw: parameters, noise levels, then every `X` entry.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let mut header: Vec<String> = self.param_names.clone();
        header.extend(self.component_names.iter().map(|c| format!("sigma_{c}")));
        for c in &self.component_names {
            header.extend((0..self.n_grid()).map(|t| format!("{c}_{t}")));
        }
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.n_kept() {
            let row = self
                .theta_draw(k)
                .iter()
                .chain(self.sigma_draw(k))
                .chain(self.x_draw(k));
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Column-major `n x d` values to a row-major trajectory.
pub fn column_major_to_trajectory(times: &[f64], d: usize, x: &[f64]) -> Trajectory {
    let n = times.len();
    let mut values = Vec::with_capacity(n * d);
    for t in 0..n {
        for i in 0..d {
            values.push(x[i * n + t]);
        }
    }
    Trajectory::new(times.to_vec(), d, values)
}

/// Piecewise-linear interpolation with flat extrapolation.
pub fn interpolate(ts: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    at.iter()
        .map(|&t| {
            if t <= ts[0] {
                return ys[0];
            }
            if t >= ts[ts.len() - 1] {
                return ys[ys.len() - 1];
            }
            let j = ts.partition_point(|&s| s <= t);
            let (t0, t1) = (ts[j - 1], ts[j]);
            let w = (t - t0) / (t1 - t0);
            ys[j - 1] * (1.0 - w) + ys[j] * w
        })
        .collect()
}

/// Linear interpolation of each component's observations onto `tau_inf`.
/// Components without observations start at the mean of all observed values.
pub fn interpolate_initial_x(obs: &ObservationSet, grid: &DiscretizedGrid) -> Vec<f64> {
    let n = grid.len();
    let all: Vec<f64> = obs.values.iter().copied().filter(|v| v.is_finite()).collect();
    let overall = if all.is_empty() {
        0.0
    } else {
        all.iter().sum::<f64>() / all.len() as f64
    };
    let mut x = Vec::with_capacity(n * obs.dim());
    for c in 0..obs.dim() {
        let (ts, ys) = obs.observed(c);
        if ts.is_empty() {
            x.extend(std::iter::repeat(overall).take(n));
        } else {
            x.extend(interpolate(&ts, &ys, &grid.tau_inf));
        }
    }
    x
}

/// Runs MAGI on `obs` over `grid`.
///
/// Observation rows must line up with `grid.tau_obs`; fully missing rows are allowed.
pub fn magi_solver(
    obs: &ObservationSet,
    grid: &DiscretizedGrid,
    system: &dyn OdeSystem,
    settings: &SolverSettings,
) -> Result<PosteriorSamples> {
    let d = system.dim();
    let p = system.n_params();
    let n = grid.len();
    if obs.dim() != d {
        return Err(Error::InvalidArgument(format!(
            "observations have {} components, system has {d}",
            obs.dim()
        )));
    }
    if settings.phi.is_some() && settings.sigma.is_none() {
        return Err(Error::InvalidArgument(
            "exogenous phi requires exogenous sigma".into(),
        ));
    }
    if settings.n_hmc < 2 {
        return Err(Error::InvalidArgument("n_hmc must be at least 2".into()));
    }
    let obs_idx = observations_on_grid(obs, grid)?;

    let means: Vec<f64> = (0..d)
        .map(|c| {
            let (_, ys) = obs.observed(c);
            if ys.is_empty() {
                0.0
            } else {
                ys.iter().sum::<f64>() / ys.len() as f64
            }
        })
        .collect();

    let (phi, sigma_init) = match (&settings.phi, &settings.sigma) {
        (Some(phi), Some(sigma)) => {
            if phi.len() != d || sigma.len() != d {
                return Err(Error::InvalidArgument(
                    "exogenous phi and sigma need one entry per component".into(),
                ));
            }
            (phi.clone(), sigma.clone())
        }
        (None, Some(sigma)) => {
            if sigma.len() != d {
                return Err(Error::InvalidArgument(
                    "exogenous sigma needs one entry per component".into(),
                ));
            }
            let mut phi = Vec::with_capacity(d);
            for c in 0..d {
                let (ts, ys) = obs.observed(c);
                phi.push(fit_phi_given_sigma(&ts, &ys, sigma[c])?.hyper);
            }
            (phi, sigma.clone())
        }
        _ => {
            let mut phi = Vec::with_capacity(d);
            let mut sig = Vec::with_capacity(d);
            for c in 0..d {
                let (ts, ys) = obs.observed(c);
                let fit = fit_phi_sigma(&ts, &ys)?;
                phi.push(fit.hyper);
                sig.push(fit.sigma);
            }
            (phi, sig)
        }
    };
    let sigma_sampled = settings.sigma.is_none();

    let bundles = phi
        .iter()
        .map(|h| build_bundle(&grid.tau_inf, *h))
        .collect::<Result<Vec<_>>>()?;
    let jitter = bundles.iter().map(|b| (b.c_jitter, b.k_jitter)).collect();

    let prior = settings
        .prior
        .clone()
        .unwrap_or_else(|| ThetaPrior::default_for(p));
    let noise = if sigma_sampled {
        NoiseModel::Sampled
    } else {
        NoiseModel::Fixed(sigma_init.clone())
    };
    let post = MagiPosterior::new(
        system,
        grid.tau_inf.clone(),
        obs_idx,
        means.clone(),
        bundles,
        prior.clone(),
        noise,
    )?
    .with_temperature(settings.temperature);

    let x0 = match &settings.x_init {
        Some(x) if x.len() == n * d => x.clone(),
        Some(x) => {
            return Err(Error::InvalidArgument(format!(
                "warm-start X has {} entries, expected {}",
                x.len(),
                n * d
            )))
        }
        None => interpolate_initial_x(obs, grid),
    };
    let mut theta0 = match &settings.theta_init {
        Some(t) if t.len() == p => t.clone(),
        Some(_) => {
            return Err(Error::InvalidArgument(format!(
                "warm-start theta needs {p} entries"
            )))
        }
        None => prior.median(),
    };
    for k in 0..p {
        theta0[k] = theta0[k].clamp(prior.lower[k], prior.upper[k]);
    }
    let log_sigma0: Vec<f64> = sigma_init
        .iter()
        .map(|s| s.ln().clamp(super::posterior::LOG_SIGMA_MIN, super::posterior::LOG_SIGMA_MAX))
        .collect();

    let assemble = |theta: &[f64]| -> Vec<f64> {
        let mut v = x0.clone();
        v.extend_from_slice(theta);
        if sigma_sampled {
            v.extend_from_slice(&log_sigma0);
        }
        v
    };

    if settings.optimize_theta_init {
        let obj = |th: &[f64]| -post.log_posterior(&assemble(th));
        let opts = NelderMeadOptions {
            max_evals: 400 * p.max(1),
            f_tol: 1e-10,
            x_tol: 1e-8,
            initial_step: 0.1 * (prior.upper[0] - prior.lower[0]).abs().clamp(1e-3, 10.0),
        };
        let start = obj(&theta0);
        let m = nelder_mead(obj, &theta0, &opts);
        if m.f < start {
            theta0 = m.x;
        }
    }

    let init = assemble(&theta0);
    if !post.log_posterior(&init).is_finite() {
        return Err(Error::Solver(
            "log posterior is not finite at the initial state".into(),
        ));
    }

    let hmc = HmcSettings {
        n_steps: settings.n_hmc,
        burn_in_ratio: settings.burn_in_ratio,
        leapfrog_steps: settings.leapfrog_steps,
        step_size: settings.step_size,
        mass: None,
        target_accept: settings.target_accept,
        adapt_step_size: true,
        adapt_mass: settings.adapt_mass,
        step_jitter: settings.step_jitter,
        seed: settings.seed,
    };
    let chain = hmc_sample(&post, &init, &hmc)?;

    let nd = n * d;
    let kept = chain.n_kept();
    let mut x_draws = Vec::with_capacity(kept * nd);
    let mut theta_draws = Vec::with_capacity(kept * p);
    let mut sigma_draws = Vec::with_capacity(kept * d);
    for k in 0..kept {
        let row = chain.draw(k);
        x_draws.extend_from_slice(&row[..nd]);
        theta_draws.extend_from_slice(&row[nd..nd + p]);
        if sigma_sampled {
            sigma_draws.extend(row[nd + p..nd + p + d].iter().map(|v| v.exp()));
        } else {
            sigma_draws.extend_from_slice(&sigma_init);
        }
    }

    let mut samples = PosteriorSamples {
        grid: grid.clone(),
        component_names: system.component_names(),
        param_names: system.param_names(),
        x_draws,
        theta_draws,
        sigma_draws,
        phi,
        sigma_init,
        sigma_sampled,
        means,
        log_density: chain.log_density.clone(),
        accept_rate: chain.accept_rate,
        burn_in_accept_rate: chain.burn_in_accept_rate,
        step_size: chain.step_size,
        divergences: chain.divergences,
        n_hmc: settings.n_hmc,
        burn_in_ratio: settings.burn_in_ratio,
        jitter,
        discrepancy: f64::NAN,
    };
    if kept > 0 {
        samples.discrepancy = post.manifold_discrepancy(&samples.x_mean(), &samples.theta_mean());
    }
    Ok(samples)
}
