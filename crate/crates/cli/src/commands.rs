//! Subcommand implementations. Each writes only under the configured output root.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use magidyn::analysis::{stability_probability, summarize, MetricReport, Summary};
use magidyn::magi::{PosteriorSamples, SolverSettings};
use magidyn::ode::{Lorenz, OdeSystem, Trajectory};
use magidyn::pmagi::{default_discretization, pmagi, PilotSettings, PmagiOutput};
use magidyn::pmsp::{pmsp_with, PmspOutput};
use magidyn::testbed::{self, make_dataset, ObservationSet, RegimeName, RegimeSpec};
use serde::Serialize;

use crate::config::{dataset_tag, RunConfig, RunSpec};
use crate::error::{Categorize, CliError, CliResult};
use crate::files::{read_lorenz_draws, read_trajectory, write_json, write_text};

pub const RUN_SUMMARY_SCHEMA: &str = "magidyn.run_summary/1";
pub const CLASSIFY_SCHEMA: &str = "magidyn.classify/1";
pub const TIMING_SCHEMA: &str = "magidyn.timing/1";

/// Observations for one run plus what is known about where they came from.
pub struct Dataset {
    pub obs: ObservationSet,
    pub spec: Option<RegimeSpec>,
    pub tag: String,
    pub t_max: f64,
    pub d_obs: f64,
}

/// Reads `--data` when given, otherwise generates the dataset for `run`.
pub fn load_dataset(cfg: &RunConfig, run: &RunSpec) -> CliResult<Dataset> {
    match &cfg.data {
        Some(path) => {
            let obs = testbed::read_csv(path).data()?;
            let meta = obs.meta.clone();
            let spec = meta
                .as_ref()
                .and_then(|m| m.regime.parse::<RegimeName>().ok())
                .map(RegimeSpec::builtin);
            let tag = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "data".into());
            Ok(Dataset {
                t_max: meta.as_ref().map_or(run.tmax, |m| m.t_max),
                d_obs: meta.as_ref().map_or(run.dobs, |m| m.d_obs),
                obs,
                spec,
                tag,
            })
        }
        None => {
            let spec = RegimeSpec::builtin(run.regime);
            let obs = make_dataset(&spec, run.tmax, run.dobs, run.alpha, run.seed).usage()?;
            Ok(Dataset {
                obs,
                spec: Some(spec),
                tag: run.dataset_tag(),
                t_max: run.tmax,
                d_obs: run.dobs,
            })
        }
    }
}

fn main_level(cfg: &RunConfig, d_obs: f64) -> CliResult<u32> {
    match cfg.disc {
        Some(k) => Ok(k),
        None => default_discretization(d_obs).usage(),
    }
}

fn solver_settings(cfg: &RunConfig, seed: u64) -> SolverSettings {
    SolverSettings {
        n_hmc: cfg.hmc_steps,
        burn_in_ratio: cfg.burn_in,
        seed,
        ..SolverSettings::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SamplerStats {
    pub n_hmc: usize,
    pub burn_in_ratio: f64,
    pub n_kept: usize,
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    pub step_size: f64,
    pub divergences: usize,
    pub max_discrepancy: f64,
}

impl SamplerStats {
    fn of(s: &PosteriorSamples) -> Self {
        SamplerStats {
            n_hmc: s.n_hmc,
            burn_in_ratio: s.burn_in_ratio,
            n_kept: s.n_kept(),
            accept_rate: s.accept_rate,
            burn_in_accept_rate: s.burn_in_accept_rate,
            step_size: s.step_size,
            divergences: s.divergences,
            max_discrepancy: s.discrepancy,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PosteriorBrief {
    pub theta: BTreeMap<String, Summary>,
    pub sigma_hat: BTreeMap<String, f64>,
    pub phi: BTreeMap<String, [f64; 2]>,
    pub stability_probability: Option<f64>,
    pub sampler: SamplerStats,
}

impl PosteriorBrief {
    fn of(s: &PosteriorSamples, sigma_override: Option<f64>) -> CliResult<Self> {
        let summary = summarize(s).solver()?;
        let theta = s.param_names.iter().cloned().zip(summary.theta).collect();
        let sigma_hat = s
            .component_names
            .iter()
            .cloned()
            .zip(s.sigma_mean())
            .collect();
        let phi = s
            .component_names
            .iter()
            .cloned()
            .zip(s.phi.iter().map(|h| [h.phi1, h.phi2]))
            .collect();
        let stability = if s.n_params() == 3 {
            Some(stability_probability(&s.theta_draws, sigma_override).solver()?)
        } else {
            None
        };
        Ok(PosteriorBrief {
            theta,
            sigma_hat,
            phi,
            stability_probability: stability,
            sampler: SamplerStats::of(s),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointBrief {
    pub step: usize,
    pub t_end: f64,
    pub file: String,
    pub ewsi_fallback: bool,
    pub posterior: PosteriorBrief,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub command: &'static str,
    pub dataset: String,
    pub run: RunSpec,
    pub settings: RunConfig,
    pub sigma_override: Option<f64>,
    pub pilot: Option<PosteriorBrief>,
    pub posterior: PosteriorBrief,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<CheckpointBrief>,
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    schema: &'static str,
    wall_time_s: f64,
}

/// One row per kept draw: parameters then noise levels.
pub fn theta_draws_csv(s: &PosteriorSamples) -> String {
    let mut out = s.param_names.join(",");
    for c in &s.component_names {
        let _ = write!(out, ",sigma_{c}");
    }
    out.push('\n');
    for k in 0..s.n_kept() {
        let row: Vec<String> = s
            .theta_draw(k)
            .iter()
            .chain(s.sigma_draw(k))
            .map(|v| v.to_string())
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes the outputs shared by pMAGI and PMSP runs.
fn write_posterior_files(dir: &Path, s: &PosteriorSamples) -> CliResult<()> {
    let summary = summarize(s).solver()?;
    write_text(&dir.join("trajectory.csv"), &summary.trajectory_csv())?;
    write_text(&dir.join("theta_draws.csv"), &theta_draws_csv(s))
}

fn write_timing(dir: &Path, started: Instant) -> CliResult<()> {
    write_json(
        &dir.join("timing.json"),
        &Timing {
            schema: TIMING_SCHEMA,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    )
}

pub fn cmd_generate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.out.join("data");
    let mut sets = Vec::new();
    for &regime in &cfg.regimes {
        let spec = RegimeSpec::builtin(regime);
        for &tmax in &cfg.tmax {
            for &dobs in &cfg.dobs {
                for &alpha in &cfg.alpha {
                    for &seed in &cfg.seeds {
                        let obs = make_dataset(&spec, tmax, dobs, alpha, seed).usage()?;
                        let tag = dataset_tag(regime.as_str(), tmax, dobs, alpha, seed);
                        sets.push((dir.join(format!("{tag}.csv")), obs));
                    }
                }
            }
        }
    }
    // Everything is generated before the first write so a bad setting leaves no files.
    let mut paths = Vec::with_capacity(sets.len());
    for (path, obs) in sets {
        write_text(&path, &testbed::to_csv_string(&obs))?;
        paths.push(path);
    }
    Ok(paths)
}

pub struct PmagiRun {
    pub data: Dataset,
    pub output: PmagiOutput,
}

pub fn run_pmagi(cfg: &RunConfig, run: &RunSpec) -> CliResult<PmagiRun> {
    let data = load_dataset(cfg, run)?;
    let pilot = PilotSettings {
        t_max_pilot: run.pilot_len,
        d_pilot: run.pilot_disc,
        n_hmc_pilot: cfg.pilot_hmc_steps,
        n_hmc_main: cfg.hmc_steps,
        d_main: main_level(cfg, data.d_obs)?,
    };
    let output = pmagi(&data.obs, &Lorenz, &pilot, &solver_settings(cfg, run.seed)).solver()?;
    Ok(PmagiRun { data, output })
}

/// Parameter errors and in-sample reconstruction sMAE, when the truth is known.
pub fn pmagi_metrics(r: &PmagiRun, sigma_override: Option<f64>) -> CliResult<Option<MetricReport>> {
    let Some(spec) = &r.data.spec else {
        return Ok(None);
    };
    let s = &r.output.main;
    let mut report = MetricReport::default();
    report
        .add_theta(&s.param_names, &s.theta_draws, &spec.theta.to_array(), sigma_override)
        .solver()?;
    let truth = spec.truth_at(&s.grid.tau_inf).solver()?;
    report
        .add_smae(&s.component_names, &s.mean_trajectory(), &truth)
        .solver()?;
    Ok(Some(report))
}

pub fn cmd_pmagi(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let run = cfg.single()?;
    let started = Instant::now();
    let r = run_pmagi(cfg, &run)?;
    let dir = cfg
        .out
        .join("pmagi")
        .join(format!("{}_pl{}_pd{}", r.data.tag, run.pilot_len, run.pilot_disc));
    let main = &r.output.main;
    let summary = RunSummary {
        schema: RUN_SUMMARY_SCHEMA,
        command: "pmagi",
        dataset: r.data.tag.clone(),
        run,
        settings: cfg.clone(),
        sigma_override: cfg.sigma_override,
        pilot: r
            .output
            .pilot
            .as_ref()
            .map(|p| PosteriorBrief::of(p, cfg.sigma_override))
            .transpose()?,
        posterior: PosteriorBrief::of(main, cfg.sigma_override)?,
        checkpoints: Vec::new(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_posterior_files(&dir, main)?;
    if let Some(m) = pmagi_metrics(&r, cfg.sigma_override)? {
        write_json(&dir.join("metrics.json"), &m)?;
    }
    write_timing(&dir, started)?;
    Ok(dir)
}

pub struct PmspRun {
    pub data: Dataset,
    pub output: PmspOutput,
}

/// Runs PMSP, handing each checkpoint to `on_checkpoint` as it completes.
pub fn run_pmsp(
    cfg: &RunConfig,
    run: &RunSpec,
    on_checkpoint: &mut dyn FnMut(&magidyn::pmsp::PmspCheckpoint) -> magidyn::Result<()>,
) -> CliResult<PmspRun> {
    let data = load_dataset(cfg, run)?;
    let settings = cfg.pmsp_settings(run.mode, run.dt_step, main_level(cfg, data.d_obs)?);
    let output = pmsp_with(
        &data.obs,
        data.t_max,
        &Lorenz,
        &settings,
        &solver_settings(cfg, run.seed),
        on_checkpoint,
    )
    .solver()?;
    Ok(PmspRun { data, output })
}

/// Parameter errors and sMAE over the prediction window, when the truth is known.
pub fn pmsp_metrics(r: &PmspRun, sigma_override: Option<f64>) -> CliResult<Option<MetricReport>> {
    let Some(spec) = &r.data.spec else {
        return Ok(None);
    };
    let s = r.output.final_samples();
    let mut report = MetricReport::default();
    report
        .add_theta(&s.param_names, &s.theta_draws, &spec.theta.to_array(), sigma_override)
        .solver()?;
    let pred = r.output.prediction_mean();
    let truth = spec.truth_at(&pred.times).solver()?;
    report.add_smae(&s.component_names, &pred, &truth).solver()?;
    Ok(Some(report))
}

pub fn cmd_pmsp(cfg: &RunConfig) -> CliResult<PathBuf> {
    cfg.validate()?;
    let run = cfg.single()?;
    let started = Instant::now();
    let tag = match &cfg.data {
        Some(_) => load_dataset(cfg, &run)?.tag,
        None => run.dataset_tag(),
    };
    let dir = cfg.out.join("pmsp").join(format!(
        "{tag}_{}_dp{}_ds{}",
        run.mode, cfg.dt_pred, run.dt_step
    ));
    let mut briefs = Vec::new();
    let mut write_error = None;
    let result = run_pmsp(cfg, &run, &mut |cp| {
        let written = std::fs::create_dir_all(&dir)
            .map_err(|e| magidyn::Error::Io {
                path: dir.clone(),
                source: e,
            })
            .and_then(|_| cp.write(&dir));
        match written {
            Ok(path) => {
                let posterior = PosteriorBrief::of(&cp.samples, cfg.sigma_override)
                    .map_err(|e| magidyn::Error::Solver(e.to_string()))?;
                briefs.push(CheckpointBrief {
                    step: cp.step,
                    t_end: cp.t_end,
                    file: path
                        .file_name()
                        .map(|f| f.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    ewsi_fallback: cp.ewsi_fallback,
                    posterior,
                });
                Ok(())
            }
            Err(e) => {
                write_error = Some(e.to_string());
                Err(e)
            }
        }
    });
    if let Some(e) = write_error {
        return Err(CliError::Data(e));
    }
    let r = result?;
    let last = r.output.final_samples();
    let summary = RunSummary {
        schema: RUN_SUMMARY_SCHEMA,
        command: "pmsp",
        dataset: r.data.tag.clone(),
        run,
        settings: cfg.clone(),
        sigma_override: cfg.sigma_override,
        pilot: r
            .output
            .pilot
            .as_ref()
            .map(|p| PosteriorBrief::of(p, cfg.sigma_override))
            .transpose()?,
        posterior: PosteriorBrief::of(last, cfg.sigma_override)?,
        checkpoints: briefs,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_posterior_files(&dir, last)?;
    if let Some(m) = pmsp_metrics(&r, cfg.sigma_override)? {
        write_json(&dir.join("metrics.json"), &m)?;
    }
    write_timing(&dir, started)?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub schema: &'static str,
    pub source: String,
    pub n_draws: usize,
    pub sigma_override: Option<f64>,
    pub stability_probability: f64,
    /// `stable` when the probability is at least one half.
    pub label: &'static str,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

pub fn cmd_classify(cfg: &RunConfig) -> CliResult<(PathBuf, Classification)> {
    let path = cfg
        .draws
        .as_ref()
        .ok_or_else(|| CliError::Usage("classify needs --draws FILE".into()))?;
    let draws = read_lorenz_draws(path)?;
    let p = stability_probability(&draws, cfg.sigma_override).data()?;
    let c = Classification {
        schema: CLASSIFY_SCHEMA,
        source: path.display().to_string(),
        n_draws: draws.len() / 3,
        sigma_override: cfg.sigma_override,
        stability_probability: p,
        label: if p >= 0.5 { "stable" } else { "chaotic" },
    };
    let out = cfg.out.join("classify").join(format!("{}.json", stem(path)));
    write_json(&out, &c)?;
    Ok((out, c))
}

pub fn cmd_metrics(cfg: &RunConfig) -> CliResult<(PathBuf, MetricReport)> {
    let pred_path = cfg
        .pred
        .as_ref()
        .ok_or_else(|| CliError::Usage("metrics needs --pred FILE".into()))?;
    let (names, pred) = read_trajectory(pred_path)?;
    let regime_spec = (cfg.regimes.len() == 1).then(|| RegimeSpec::builtin(cfg.regimes[0]));
    let truth: Trajectory = match &cfg.truth {
        Some(path) => read_trajectory(path)?.1,
        None => {
            let spec = regime_spec.as_ref().ok_or_else(|| {
                CliError::Usage("metrics needs --truth FILE or a single --regime".into())
            })?;
            spec.truth_at(&pred.times).data()?
        }
    };
    let mut report = MetricReport::default();
    report.add_smae(&names, &pred, &truth).data()?;
    if let Some(draws_path) = &cfg.draws {
        let spec = regime_spec.as_ref().ok_or_else(|| {
            CliError::Usage("parameter metrics need a single --regime for the true values".into())
        })?;
        let draws = read_lorenz_draws(draws_path)?;
        report
            .add_theta(&Lorenz.param_names(), &draws, &spec.theta.to_array(), cfg.sigma_override)
            .data()?;
    }
    let out = cfg.out.join("metrics").join(format!("{}.json", stem(pred_path)));
    write_json(&out, &report)?;
    Ok((out, report))
}
