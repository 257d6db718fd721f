//! Run configuration: defaults, `key=value` files and flag overrides.

use std::fs;
use std::path::{Path, PathBuf};

use magidyn::pmagi::default_discretization;
use magidyn::pmsp::{PilotMode, PmspSettings};
use magidyn::testbed::{observation_grid_shape, RegimeName};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Output root used when neither `--out` nor `MAGIDYN_OUT` is given.
pub const DEFAULT_OUT: &str = "magidyn-out";
pub const OUT_ENV: &str = "MAGIDYN_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pmagi,
    Pmsp,
}

/// Every setting a command may use. List-valued fields are swept by `bench`;
/// single-run commands require exactly one value in each.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub regimes: Vec<RegimeName>,
    pub tmax: Vec<f64>,
    pub dobs: Vec<f64>,
    pub alpha: Vec<f64>,
    pub seeds: Vec<u64>,
    pub pilot_len: Vec<f64>,
    pub pilot_disc: Vec<u32>,
    pub pilot_hmc_steps: usize,
    /// Main-run discretization; defaults to `log2(40 / d_obs)`.
    pub disc: Option<u32>,
    pub hmc_steps: usize,
    /// PMSP peak budget; defaults to `hmc_steps`.
    pub hmc_peak: Option<usize>,
    pub burn_in: f64,
    pub modes: Vec<PilotMode>,
    pub dt_pred: f64,
    pub dt_step: Vec<f64>,
    pub sigma_override: Option<f64>,
    pub jobs: usize,
    pub method: Method,
    /// Left out of serialized settings so outputs do not depend on where they land.
    #[serde(skip)]
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub draws: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

impl RunConfig {
    /// Defaults, with the output root taken from `MAGIDYN_OUT` when set.
    pub fn new() -> Self {
        let out = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        RunConfig {
            regimes: vec![RegimeName::StableCanonical],
            tmax: vec![2.0],
            dobs: vec![40.0],
            alpha: vec![1.5e-3],
            seeds: vec![0],
            pilot_len: vec![1.0],
            pilot_disc: vec![0],
            pilot_hmc_steps: 4001,
            disc: None,
            hmc_steps: 16001,
            hmc_peak: None,
            burn_in: 0.5,
            modes: vec![PilotMode::ROP],
            dt_pred: 0.5,
            dt_step: vec![0.5],
            sigma_override: None,
            jobs: 1,
            method: Method::Pmagi,
            out,
            data: None,
            draws: None,
            pred: None,
            truth: None,
        }
    }

    /// Applies one setting. Keys match the long flag names; `_` may stand for `-`.
    pub fn apply(&mut self, key: &str, value: &str) -> CliResult<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let bad = |what: &str| CliError::Usage(format!("{key}: {what} '{value}'"));
        match key.as_str() {
            "regime" | "regimes" => {
                self.regimes = list(value, |s| s.parse::<RegimeName>().map_err(|e| e.to_string()))
                    .map_err(|e| CliError::Usage(format!("{key}: {e}")))?
            }
            "tmax" => self.tmax = floats(value).ok_or_else(|| bad("expected numbers, got"))?,
            "dobs" => self.dobs = floats(value).ok_or_else(|| bad("expected numbers, got"))?,
            "alpha" => self.alpha = floats(value).ok_or_else(|| bad("expected numbers, got"))?,
            "seed" | "seeds" => self.seeds = seeds(value).ok_or_else(|| bad("expected seeds, got"))?,
            "pilot-len" => {
                self.pilot_len = floats(value).ok_or_else(|| bad("expected numbers, got"))?
            }
            "pilot-disc" => {
                self.pilot_disc = list(value, |s| s.parse::<u32>().map_err(|e| e.to_string()))
                    .map_err(|_| bad("expected levels, got"))?
            }
            "pilot-hmc-steps" => {
                self.pilot_hmc_steps = value.parse().map_err(|_| bad("expected a count, got"))?
            }
            "disc" => self.disc = Some(value.parse().map_err(|_| bad("expected a level, got"))?),
            "hmc-steps" => self.hmc_steps = value.parse().map_err(|_| bad("expected a count, got"))?,
            "hmc-peak" => {
                self.hmc_peak = Some(value.parse().map_err(|_| bad("expected a count, got"))?)
            }
            "burn-in" => self.burn_in = value.parse().map_err(|_| bad("expected a ratio, got"))?,
            "mode" | "modes" => {
                self.modes = list(value, |s| s.parse::<PilotMode>().map_err(|e| e.to_string()))
                    .map_err(|e| CliError::Usage(format!("{key}: {e}")))?
            }
            "dt-pred" => self.dt_pred = value.parse().map_err(|_| bad("expected a number, got"))?,
            "dt-step" => self.dt_step = floats(value).ok_or_else(|| bad("expected numbers, got"))?,
            "sigma-override" => {
                self.sigma_override = Some(value.parse().map_err(|_| bad("expected a number, got"))?)
            }
            "jobs" => self.jobs = value.parse().map_err(|_| bad("expected a count, got"))?,
            "method" => {
                self.method = match value {
                    "pmagi" => Method::Pmagi,
                    "pmsp" => Method::Pmsp,
                    _ => return Err(bad("expected pmagi or pmsp, got")),
                }
            }
            "out" => self.out = PathBuf::from(value),
            "data" => self.data = Some(PathBuf::from(value)),
            "draws" => self.draws = Some(PathBuf::from(value)),
            "pred" => self.pred = Some(PathBuf::from(value)),
            "truth" => self.truth = Some(PathBuf::from(value)),
            _ => return Err(CliError::Usage(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Applies a `key=value` file; blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            self.apply(k, v).map_err(|e| {
                CliError::Usage(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        Ok(())
    }

    /// Checks every setting so that commands fail before writing anything.
    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        for (name, empty) in [
            ("regime", self.regimes.is_empty()),
            ("tmax", self.tmax.is_empty()),
            ("dobs", self.dobs.is_empty()),
            ("alpha", self.alpha.is_empty()),
            ("seeds", self.seeds.is_empty()),
            ("pilot-len", self.pilot_len.is_empty()),
            ("pilot-disc", self.pilot_disc.is_empty()),
            ("mode", self.modes.is_empty()),
            ("dt-step", self.dt_step.is_empty()),
        ] {
            if empty {
                return usage(format!("{name} needs at least one value"));
            }
        }
        if self.data.is_none() {
            for &t in &self.tmax {
                for &d in &self.dobs {
                    observation_grid_shape(t, d, 10.0)
                        .map_err(|e| CliError::Usage(e.to_string()))?;
                    if self.disc.is_none() {
                        default_discretization(d).map_err(|e| {
                            CliError::Usage(format!("{e}; pass --disc to choose a level"))
                        })?;
                    }
                }
            }
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a >= 0.0)) {
            return usage(format!("alpha must be >= 0, got {a}"));
        }
        if let Some(p) = self.pilot_len.iter().find(|p| !(**p >= 0.0)) {
            return usage(format!("pilot-len must be >= 0, got {p}"));
        }
        if self.pilot_disc.iter().chain(self.disc.iter()).any(|&k| k > 8) {
            return usage("discretization levels above 8 are not supported".into());
        }
        if self.hmc_steps < 2 || self.pilot_hmc_steps < 2 || self.hmc_peak.is_some_and(|p| p < 2) {
            return usage("HMC step counts must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return usage(format!("burn-in must lie in [0, 1), got {}", self.burn_in));
        }
        if self.jobs == 0 {
            return usage("jobs must be at least 1".into());
        }
        if let Some(s) = self.sigma_override {
            if !(s.is_finite()) {
                return usage(format!("sigma-override must be finite, got {s}"));
            }
        }
        for &dt_step in &self.dt_step {
            self.pmsp_settings(PilotMode::ROP, dt_step, 0)
                .validate()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(())
    }

    /// Number of runs in the cross product swept by `bench`.
    pub fn n_runs(&self) -> usize {
        let per_dataset = match self.method {
            Method::Pmagi => self.pilot_len.len() * self.pilot_disc.len(),
            Method::Pmsp => self.modes.len() * self.dt_step.len(),
        };
        self.regimes.len()
            * self.tmax.len()
            * self.dobs.len()
            * self.alpha.len()
            * self.seeds.len()
            * per_dataset
    }

    /// The single run described by a config with one value per list.
    pub fn single(&self) -> CliResult<RunSpec> {
        let one = |name: &str, n: usize| {
            if n == 1 {
                Ok(())
            } else {
                Err(CliError::Usage(format!(
                    "{name} has {n} values; this command runs a single setting (use bench to sweep)"
                )))
            }
        };
        if self.data.is_none() {
            one("regime", self.regimes.len())?;
            one("tmax", self.tmax.len())?;
            one("dobs", self.dobs.len())?;
            one("alpha", self.alpha.len())?;
        }
        one("seeds", self.seeds.len())?;
        one("pilot-len", self.pilot_len.len())?;
        one("pilot-disc", self.pilot_disc.len())?;
        one("mode", self.modes.len())?;
        one("dt-step", self.dt_step.len())?;
        Ok(RunSpec {
            regime: self.regimes[0],
            tmax: self.tmax[0],
            dobs: self.dobs[0],
            alpha: self.alpha[0],
            seed: self.seeds[0],
            pilot_len: self.pilot_len[0],
            pilot_disc: self.pilot_disc[0],
            mode: self.modes[0],
            dt_step: self.dt_step[0],
        })
    }

    /// Every run of the sweep, in a fixed order.
    pub fn sweep(&self) -> Vec<RunSpec> {
        let mut runs = Vec::with_capacity(self.n_runs());
        for &regime in &self.regimes {
            for &tmax in &self.tmax {
                for &dobs in &self.dobs {
                    for &alpha in &self.alpha {
                        for &seed in &self.seeds {
                            let base = RunSpec {
                                regime,
                                tmax,
                                dobs,
                                alpha,
                                seed,
                                pilot_len: self.pilot_len[0],
                                pilot_disc: self.pilot_disc[0],
                                mode: self.modes[0],
                                dt_step: self.dt_step[0],
                            };
                            match self.method {
                                Method::Pmagi => {
                                    for &pilot_len in &self.pilot_len {
                                        for &pilot_disc in &self.pilot_disc {
                                            runs.push(RunSpec {
                                                pilot_len,
                                                pilot_disc,
                                                ..base
                                            });
                                        }
                                    }
                                }
                                Method::Pmsp => {
                                    for &mode in &self.modes {
                                        for &dt_step in &self.dt_step {
                                            runs.push(RunSpec {
                                                mode,
                                                dt_step,
                                                ..base
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        runs
    }

    pub fn pmsp_settings(&self, mode: PilotMode, dt_step: f64, level: u32) -> PmspSettings {
        PmspSettings {
            dt_pred: self.dt_pred,
            dt_step,
            mode,
            level,
            n_hmc_init: self.hmc_steps,
            n_hmc_peak: self.hmc_peak.unwrap_or(self.hmc_steps),
            n_hmc_pilot: self.pilot_hmc_steps,
            burn_in_init: self.burn_in,
            ..PmspSettings::default()
        }
    }
}

/// One concrete setting of the swept fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSpec {
    pub regime: RegimeName,
    pub tmax: f64,
    pub dobs: f64,
    pub alpha: f64,
    pub seed: u64,
    pub pilot_len: f64,
    pub pilot_disc: u32,
    pub mode: PilotMode,
    pub dt_step: f64,
}

impl RunSpec {
    pub fn dataset_tag(&self) -> String {
        dataset_tag(self.regime.as_str(), self.tmax, self.dobs, self.alpha, self.seed)
    }
}

pub fn dataset_tag(regime: &str, tmax: f64, dobs: f64, alpha: f64, seed: u64) -> String {
    format!("{regime}_T{tmax}_d{dobs}_a{alpha}_s{seed}")
}

fn list<T>(value: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn floats(value: &str) -> Option<Vec<f64>> {
    list(value, |s| s.parse::<f64>().map_err(|e| e.to_string())).ok()
}

/// Comma-separated seeds; `a..b` expands to `a, a+1, ..., b-1`.
fn seeds(value: &str) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        match item.split_once("..") {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
                if b <= a {
                    return None;
                }
                out.extend(a..b);
            }
            None => out.push(item.parse().ok()?),
        }
    }
    Some(out)
}
