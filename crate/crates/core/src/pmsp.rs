//! Sequential prediction: extend the inference horizon past the last observation
//! one step at a time, warm-starting each MAGI run from the previous one.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::summarize;
use crate::error::{Error, Result};
use crate::gp::KernelHyper;
use crate::magi::{discretize, magi_solver, DiscretizedGrid, PosteriorSamples, SolverSettings};
use crate::ode::{integrate, IntegratorOptions, OdeSystem, Trajectory};
use crate::pmagi::run_pilot_window;
use crate::testbed::ObservationSet;

/// Where `(phi1, phi2)` are estimated and whether they are re-estimated each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PilotMode {
    /// No pilot: every step fits `phi` and `sigma` from the observations.
    NP,
    /// Left pilot on the first unit of data.
    LP,
    /// Right pilot on the last unit of data.
    RP,
    /// Left pilot, then re-fit `phi` on the newest predicted window each step.
    LOP,
    /// Right pilot, then re-fit `phi` on the newest predicted window each step.
    ROP,
}

impl PilotMode {
    pub const ALL: [PilotMode; 5] = [
        PilotMode::NP,
        PilotMode::LP,
        PilotMode::RP,
        PilotMode::LOP,
        PilotMode::ROP,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PilotMode::NP => "NP",
            PilotMode::LP => "LP",
            PilotMode::RP => "RP",
            PilotMode::LOP => "LOP",
            PilotMode::ROP => "ROP",
        }
    }

    pub fn online(self) -> bool {
        matches!(self, PilotMode::LOP | PilotMode::ROP)
    }
}

impl fmt::Display for PilotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PilotMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PilotMode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown pilot mode '{s}' (NP, LP, RP, LOP, ROP)"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmspSettings {
    pub dt_pred: f64,
    pub dt_step: f64,
    pub mode: PilotMode,
    /// Discretization level of the observation window.
    pub level: u32,
    pub n_hmc_init: usize,
    pub n_hmc_peak: usize,
    /// HMC length of the first pilot.
    pub n_hmc_pilot: usize,
    /// HMC length of the per-step pilots of the online modes.
    pub n_hmc_repilot: usize,
    pub burn_in_init: f64,
    pub burn_in_later: f64,
    /// Prediction grid points per unit time.
    pub pred_density: u32,
}

impl Default for PmspSettings {
    fn default() -> Self {
        PmspSettings {
            dt_pred: 0.5,
            dt_step: 0.5,
            mode: PilotMode::ROP,
            level: 0,
            n_hmc_init: 16001,
            n_hmc_peak: 16001,
            n_hmc_pilot: 4001,
            n_hmc_repilot: 101,
            burn_in_init: 0.5,
            burn_in_later: 0.2,
            pred_density: 40,
        }
    }
}

impl PmspSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.dt_pred > 0.0 && self.dt_pred.is_finite()) {
            return bad("dt_pred must be positive");
        }
        if !(self.dt_step > 0.0 && self.dt_step <= self.dt_pred) {
            return bad("dt_step must lie in (0, dt_pred]");
        }
        if self.n_hmc_init < 2 || self.n_hmc_peak < 2 || self.n_hmc_pilot < 2 || self.n_hmc_repilot < 2 {
            return bad("HMC lengths must be at least 2");
        }
        for b in [self.burn_in_init, self.burn_in_later] {
            if !(0.0..1.0).contains(&b) {
                return bad("burn-in ratios must lie in [0, 1)");
            }
        }
        if self.pred_density == 0 {
            return bad("prediction density must be positive");
        }
        let n_add = self.dt_pred * self.pred_density as f64;
        if (n_add - n_add.round()).abs() > 1e-9 * n_add.max(1.0) {
            return bad("dt_pred times the prediction density must be an integer");
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        n_steps(self.dt_pred, self.dt_step)
    }
}

/// `ceil(dt_pred / dt_step)`, tolerant to round-off in the ratio.
pub fn n_steps(dt_pred: f64, dt_step: f64) -> usize {
    let r = dt_pred / dt_step;
    let n = r.round();
    if (r - n).abs() <= 1e-9 * r.max(1.0) {
        n.max(1.0) as usize
    } else {
        r.ceil() as usize
    }
}

/// `density * dt_pred` evenly spaced points on `(t_max, t_max + dt_pred]`.
pub fn prediction_times(t_max: f64, dt_pred: f64, density: u32) -> Vec<f64> {
    let n = (dt_pred * density as f64).round() as usize;
    (1..=n)
        .map(|j| t_max + j as f64 * dt_pred / n as f64)
        .collect()
}

/// End of the horizon after `step` (1-based) steps, capped at `t_max + dt_pred`.
pub fn step_horizon(t_max: f64, step: usize, dt_step: f64, dt_pred: f64) -> f64 {
    (t_max + step as f64 * dt_step).min(t_max + dt_pred)
}

/// HMC length of a step: `n_hmc_init` for the first, otherwise the peak budget
/// scaled by the fraction of the full horizon covered (rounded half up).
pub fn step_budget(step: usize, t_pred_step: f64, t_pred: f64, settings: &PmspSettings) -> usize {
    if step <= 1 {
        return settings.n_hmc_init;
    }
    let x = t_pred_step * settings.n_hmc_peak as f64 / t_pred;
    ((x + 0.5).floor() as usize).max(2)
}

/// Time window for estimating `phi` before `step` (1-based), or `None` when the
/// mode keeps its current estimate.
///
/// `prev_grid` is the previous step's inference grid and is only consulted for the
/// online modes after the first step.
pub fn select_pilot_window(
    mode: PilotMode,
    step: usize,
    t_max: f64,
    dt_step: f64,
    prev_grid: Option<&[f64]>,
) -> Option<(f64, f64)> {
    match (mode, step) {
        (PilotMode::NP, _) => None,
        (PilotMode::LP | PilotMode::LOP, 1) => Some((0.0, t_max.min(1.0))),
        (PilotMode::RP | PilotMode::ROP, 1) => Some(((t_max - 1.0).max(0.0), t_max)),
        (PilotMode::LOP | PilotMode::ROP, _) => {
            let end = prev_grid?.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Some((end - dt_step, end))
        }
        _ => None,
    }
}

/// Warm start for the new prediction window: integrate from `last_state` at
/// `t_prev` with `last_theta`, reporting the state at `times` (all after `t_prev`).
///
/// If integration fails or leaves the finite range, the last state is repeated
/// instead and the returned flag is `true`.
pub fn ewsi_out_of_sample(
    system: &dyn OdeSystem,
    last_state: &[f64],
    last_theta: &[f64],
    t_prev: f64,
    times: &[f64],
) -> (Trajectory, bool) {
    let d = last_state.len();
    let constant = || {
        Trajectory::new(
            times.to_vec(),
            d,
            times.iter().flat_map(|_| last_state.iter().copied()).collect(),
        )
    };
    if times.is_empty() {
        return (constant(), false);
    }
    let mut grid = Vec::with_capacity(times.len() + 1);
    grid.push(t_prev);
    grid.extend_from_slice(times);
    match integrate(system, last_state, last_theta, &grid, &IntegratorOptions::WARM_START) {
        Ok(tr) if tr.values.iter().all(|v| v.is_finite()) => (
            Trajectory::new(times.to_vec(), d, tr.values[d..].to_vec()),
            false,
        ),
        _ => (constant(), true),
    }
}

/// Column-major warm start: the previous draw on its own grid followed by the
/// out-of-sample segment, per component.
pub fn assemble_ewsi(prev_x: &[f64], n_prev: usize, segment: &Trajectory) -> Vec<f64> {
    let d = segment.dim;
    let m = segment.len();
    let mut x = Vec::with_capacity((n_prev + m) * d);
    for c in 0..d {
        x.extend_from_slice(&prev_x[c * n_prev..(c + 1) * n_prev]);
        x.extend(segment.component(c));
    }
    x
}

/// Output of one sequential step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmspCheckpoint {
    /// 1-based step index.
    pub step: usize,
    /// Horizon end of this step.
    pub t_end: f64,
    pub n_hmc: usize,
    pub burn_in_ratio: f64,
    pub phi: Vec<KernelHyper>,
    pub sigma: Vec<f64>,
    /// The out-of-sample warm start fell back to constant extension.
    pub ewsi_fallback: bool,
    pub samples: PosteriorSamples,
}

impl PmspCheckpoint {
    /// Summary CSV: `#` metadata lines (run settings, `phi`, `sigma`, `theta`
    /// summaries) then the trajectory mean and 95% band per grid point.
    pub fn to_csv_string(&self) -> Result<String> {
        let s = summarize(&self.samples)?;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# step={} t_end={} n_hmc={} burn_in={} ewsi_fallback={}",
            self.step, self.t_end, self.n_hmc, self.burn_in_ratio, self.ewsi_fallback
        );
        for (c, name) in s.component_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "# component={name} phi1={} phi2={} sigma={}",
                self.phi[c].phi1, self.phi[c].phi2, self.sigma[c]
            );
        }
        for (j, name) in s.param_names.iter().enumerate() {
            let q = s.theta[j];
            let _ = writeln!(
                out,
                "# param={name} mean={} sd={} q025={} q975={}",
                q.mean, q.sd, q.q025, q.q975
            );
        }
        out.push_str(&s.trajectory_csv());
        Ok(out)
    }

    pub fn file_name(&self) -> String {
        format!("checkpoint_step{:03}.csv", self.step)
    }

    /// Writes the summary CSV into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        fs::write(&path, self.to_csv_string()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmspOutput {
    /// Samples of the first pilot, if the mode uses one.
    pub pilot: Option<PosteriorSamples>,
    pub tau_add: Vec<f64>,
    pub checkpoints: Vec<PmspCheckpoint>,
}

impl PmspOutput {
    /// Samples after the last step.
    pub fn final_samples(&self) -> &PosteriorSamples {
        &self.checkpoints.last().expect("at least one step").samples
    }

    /// Posterior-mean prediction on the appended points only.
    pub fn prediction_mean(&self) -> Trajectory {
        let s = self.final_samples();
        let full = s.mean_trajectory();
        let n_pred = self.tau_add.len();
        let start = full.len() - n_pred;
        Trajectory::new(
            full.times[start..].to_vec(),
            full.dim,
            full.values[start * full.dim..].to_vec(),
        )
    }
}

fn step_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Grid with the given times as both observation and inference points.
fn plain_grid(times: &[f64]) -> DiscretizedGrid {
    DiscretizedGrid {
        tau_obs: times.to_vec(),
        tau_inf: times.to_vec(),
        level: 0,
        obs_index: (0..times.len()).collect(),
    }
}

/// Re-fits `phi` on the previous step's final draw over `[t0, t1]`, holding `sigma`.
fn repilot(
    prev: &PosteriorSamples,
    window: (f64, f64),
    sigma: &[f64],
    system: &dyn OdeSystem,
    n_hmc: usize,
    solver: &SolverSettings,
    seed: u64,
) -> Result<Vec<KernelHyper>> {
    let tol = 1e-9 * window.1.abs().max(1.0);
    let n = prev.n_grid();
    let d = prev.dim();
    let last = prev.last_x();
    let rows: Vec<usize> = (0..n)
        .filter(|&i| {
            let t = prev.grid.tau_inf[i];
            t >= window.0 - tol && t <= window.1 + tol
        })
        .collect();
    if rows.len() < 3 {
        return Err(Error::PilotTooShort {
            t_pilot: window.1 - window.0,
            found: rows.len(),
        });
    }
    let times: Vec<f64> = rows.iter().map(|&i| prev.grid.tau_inf[i]).collect();
    let values = rows
        .iter()
        .flat_map(|&i| (0..d).map(move |c| last[c * n + i]))
        .collect();
    let data = ObservationSet::new(times.clone(), prev.component_names.clone(), values)?;
    let settings = SolverSettings {
        n_hmc,
        phi: None,
        sigma: Some(sigma.to_vec()),
        x_init: None,
        theta_init: Some(prev.last_theta().to_vec()),
        optimize_theta_init: false,
        seed,
        ..solver.clone()
    };
    Ok(magi_solver(&data, &plain_grid(&times), system, &settings)?.phi)
}

/// Runs sequential prediction and returns every step's checkpoint.
pub fn pmsp(
    obs: &ObservationSet,
    t_max: f64,
    system: &dyn OdeSystem,
    settings: &PmspSettings,
    solver: &SolverSettings,
) -> Result<PmspOutput> {
    pmsp_with(obs, t_max, system, settings, solver, &mut |_| Ok(()))
}

/// [`pmsp`] that hands each checkpoint to `on_checkpoint` as soon as it exists, so
/// a failure in a later step leaves earlier results persisted.
pub fn pmsp_with(
    obs: &ObservationSet,
    t_max: f64,
    system: &dyn OdeSystem,
    settings: &PmspSettings,
    solver: &SolverSettings,
    on_checkpoint: &mut dyn FnMut(&PmspCheckpoint) -> Result<()>,
) -> Result<PmspOutput> {
    settings.validate()?;
    let last_obs = obs.times.last().copied().ok_or_else(|| {
        Error::InvalidArgument("no observations".into())
    })?;
    if !(last_obs < t_max) {
        return Err(Error::InvalidArgument(format!(
            "observations must end before t_max = {t_max} (last at {last_obs})"
        )));
    }
    let d = system.dim();
    let t_pred = t_max + settings.dt_pred;
    let n_steps = settings.n_steps();
    let tau_add = prediction_times(t_max, settings.dt_pred, settings.pred_density);
    let full_obs = obs.with_missing_rows(&tau_add)?;
    let full_grid = discretize(&obs.times, settings.level)?.with_appended(&tau_add)?;

    let mut phi: Option<Vec<KernelHyper>> = None;
    let mut sigma: Option<Vec<f64>> = None;
    let mut theta_pilot: Option<Vec<f64>> = None;
    let mut pilot_samples = None;
    if let Some((t0, t1)) = select_pilot_window(settings.mode, 1, t_max, settings.dt_step, None) {
        let pilot_solver = SolverSettings {
            burn_in_ratio: solver.burn_in_ratio,
            ..solver.clone()
        };
        let (samples, est) = run_pilot_window(
            obs,
            system,
            t0,
            t1,
            settings.level,
            settings.n_hmc_pilot,
            &pilot_solver,
        )?;
        phi = Some(est.phi);
        sigma = Some(est.sigma);
        theta_pilot = Some(est.theta);
        pilot_samples = Some(samples);
    }

    let mut checkpoints: Vec<PmspCheckpoint> = Vec::with_capacity(n_steps);
    for step in 1..=n_steps {
        let t_step = step_horizon(t_max, step, settings.dt_step, settings.dt_pred);
        let grid = full_grid.truncated(t_step);
        let step_obs = full_obs.restrict_to(t_step);
        let prev = checkpoints.last().map(|c| &c.samples);

        if step > 1 && settings.mode.online() {
            let prev = prev.expect("previous step exists");
            let window = select_pilot_window(
                settings.mode,
                step,
                t_max,
                settings.dt_step,
                Some(&prev.grid.tau_inf),
            )
            .expect("online modes re-estimate");
            let frozen = sigma.as_deref().expect("online modes ran a pilot");
            phi = Some(repilot(
                prev,
                window,
                frozen,
                system,
                settings.n_hmc_repilot,
                solver,
                step_seed(solver.seed, 1000 + step as u64),
            )?);
        }

        let n_hmc = step_budget(step, t_step, t_pred, settings);
        let mut fallback = false;
        let mut step_settings = SolverSettings {
            n_hmc,
            phi: phi.clone(),
            sigma: sigma.clone(),
            seed: step_seed(solver.seed, step as u64),
            ..solver.clone()
        };
        match prev {
            None => {
                step_settings.burn_in_ratio = settings.burn_in_init;
                if let Some(th) = &theta_pilot {
                    step_settings.theta_init = Some(th.clone());
                    step_settings.optimize_theta_init = false;
                }
            }
            Some(prev) => {
                step_settings.burn_in_ratio = settings.burn_in_later;
                let n_prev = prev.n_grid();
                let last_x = prev.last_x();
                let last_state: Vec<f64> = (0..d).map(|c| last_x[c * n_prev + n_prev - 1]).collect();
                let t_prev = prev.grid.tau_inf[n_prev - 1];
                let (segment, fell_back) = ewsi_out_of_sample(
                    system,
                    &last_state,
                    prev.last_theta(),
                    t_prev,
                    &grid.tau_inf[n_prev..],
                );
                fallback = fell_back;
                step_settings.x_init = Some(assemble_ewsi(last_x, n_prev, &segment));
                step_settings.theta_init = Some(prev.last_theta().to_vec());
                step_settings.optimize_theta_init = false;
            }
        }

        let samples = magi_solver(&step_obs, &grid, system, &step_settings)?;
        let cp = PmspCheckpoint {
            step,
            t_end: t_step,
            n_hmc,
            burn_in_ratio: step_settings.burn_in_ratio,
            phi: samples.phi.clone(),
            sigma: samples.sigma_mean(),
            ewsi_fallback: fallback,
            samples,
        };
        on_checkpoint(&cp)?;
        checkpoints.push(cp);
    }

    Ok(PmspOutput {
        pilot: pilot_samples,
        tau_add,
        checkpoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{lorenz_fixed_points, Lorenz, Theta};

    #[test]
    fn step_counts() {
        assert_eq!(n_steps(4.0, 0.5), 8);
        assert_eq!(n_steps(0.5, 0.5), 1);
        assert_eq!(n_steps(2.0, 0.75), 3);
        assert_eq!(n_steps(0.3, 0.1), 3);
    }

    #[test]
    fn prediction_grid() {
        let t = prediction_times(2.0, 0.5, 40);
        assert_eq!(t.len(), 20);
        assert!(t[0] > 2.0);
        assert_eq!(*t.last().unwrap(), 2.5);
        assert!(t.windows(2).all(|w| (w[1] - w[0] - 0.025).abs() < 1e-12));
    }

    #[test]
    fn budget_scaling() {
        let s = PmspSettings {
            dt_pred: 4.0,
            dt_step: 1.0,
            n_hmc_init: 7,
            n_hmc_peak: 32001,
            ..Default::default()
        };
        assert_eq!(step_budget(1, 3.0, 6.0, &s), 7);
        assert_eq!(step_budget(2, 4.0, 6.0, &s), 21334);
        assert_eq!(step_budget(5, 6.0, 6.0, &s), 32001);
    }

    #[test]
    fn pilot_windows() {
        assert_eq!(select_pilot_window(PilotMode::LP, 1, 2.0, 0.5, None), Some((0.0, 1.0)));
        assert_eq!(select_pilot_window(PilotMode::LOP, 1, 0.5, 0.5, None), Some((0.0, 0.5)));
        assert_eq!(select_pilot_window(PilotMode::RP, 1, 0.5, 0.5, None), Some((0.0, 0.5)));
        assert_eq!(select_pilot_window(PilotMode::ROP, 1, 2.0, 0.5, None), Some((1.0, 2.0)));
        let prev = [0.0, 1.0, 2.0, 2.5, 3.0];
        assert_eq!(
            select_pilot_window(PilotMode::ROP, 3, 2.0, 0.5, Some(&prev)),
            Some((2.5, 3.0))
        );
        assert_eq!(select_pilot_window(PilotMode::RP, 3, 2.0, 0.5, Some(&prev)), None);
        assert_eq!(select_pilot_window(PilotMode::LP, 2, 2.0, 0.5, Some(&prev)), None);
        assert_eq!(select_pilot_window(PilotMode::NP, 1, 2.0, 0.5, None), None);
    }

    #[test]
    fn mode_parsing() {
        for m in PilotMode::ALL {
            assert_eq!(m.as_str().parse::<PilotMode>().unwrap(), m);
        }
        assert_eq!("rop".parse::<PilotMode>().unwrap(), PilotMode::ROP);
        assert!("XP".parse::<PilotMode>().is_err());
    }

    #[test]
    fn settings_validation() {
        assert!(PmspSettings::default().validate().is_ok());
        let bad_step = PmspSettings {
            dt_step: 0.75,
            ..Default::default()
        };
        assert!(bad_step.validate().is_err());
        let bad_density = PmspSettings {
            dt_pred: 0.51,
            dt_step: 0.5,
            ..Default::default()
        };
        assert!(bad_density.validate().is_err());
    }

    struct Frozen;
    impl OdeSystem for Frozen {
        fn dim(&self) -> usize {
            2
        }
        fn n_params(&self) -> usize {
            0
        }
        fn rhs(&self, _x: &[f64], _t: f64, _th: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn grad_x(&self, _x: &[f64], _t: f64, _th: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn grad_theta(&self, _x: &[f64], _t: f64, _th: &[f64], _out: &mut [f64]) {}
    }

    #[test]
    fn zero_field_extension_is_constant() {
        let times = prediction_times(1.0, 0.5, 40);
        let (tr, fb) = ewsi_out_of_sample(&Frozen, &[1.5, -2.0], &[], 1.0, &times);
        assert!(!fb);
        assert_eq!(tr.times, times);
        for i in 0..tr.len() {
            assert_eq!(tr.row(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn lorenz_fixed_point_extension() {
        let th = Theta::new(8.0 / 3.0, 6.0, 10.0);
        let fp = lorenz_fixed_points(th)[0].to_array();
        let times = prediction_times(2.0, 0.5, 40);
        let (tr, fb) = ewsi_out_of_sample(&Lorenz, &fp, &th.to_array(), 2.0, &times);
        assert!(!fb);
        for i in 0..tr.len() {
            for c in 0..3 {
                assert!((tr.row(i)[c] - fp[c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn blow_up_falls_back_to_constant() {
        // rho far outside any sane range drives the state to overflow quickly.
        let th = [1.0, 1e150, 1e150];
        let times = prediction_times(0.0, 0.5, 40);
        let (tr, fb) = ewsi_out_of_sample(&Lorenz, &[1.0, 1.0, 1.0], &th, 0.0, &times);
        assert!(fb);
        assert!(tr.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ewsi_keeps_previous_draw_bitwise() {
        let prev: Vec<f64> = (0..12).map(|i| (i as f64).sin() / 3.0).collect();
        let seg = Trajectory::new(vec![1.0, 1.1], 3, vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0]);
        let x = assemble_ewsi(&prev, 4, &seg);
        assert_eq!(x.len(), 18);
        for c in 0..3 {
            assert_eq!(&x[c * 6..c * 6 + 4], &prev[c * 4..c * 4 + 4]);
            assert_eq!(&x[c * 6 + 4..c * 6 + 6], &seg.component(c)[..]);
        }
    }
}
