//! `magidyn`: generate Lorenz datasets, run pilot MAGI and sequential prediction,
//! classify stability, compute metrics and run benchmark sweeps.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.

mod bench;
mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "magidyn", version, about = "Bayesian ODE inference and prediction on Lorenz test beds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one observation CSV per (regime, tmax, dobs, alpha, seed).
    Generate(Flags),
    /// Run pilot MAGI on one dataset.
    Pmagi(Flags),
    /// Run sequential prediction on one dataset.
    Pmsp(Flags),
    /// Stability probability of a file of (beta, rho, sigma) draws.
    Classify(Flags),
    /// sMAE of a trajectory file against the truth, plus parameter errors.
    Metrics(Flags),
    /// Sweep the cross product of list-valued settings into a long-format CSV.
    Bench(Flags),
}

/// Flags mirror the `key=value` config file; flags given on the command line win.
/// List-valued settings take comma-separated values.
#[derive(Args, Default)]
struct Flags {
    /// key=value settings file applied before the flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Regime name(s): stable-canonical, stable-transient-chaos, chaotic-butterfly, chaotic-no-butterfly.
    #[arg(long, alias = "regimes")]
    regime: Option<String>,
    /// End of the observation window.
    #[arg(long)]
    tmax: Option<String>,
    /// Observations per unit time (must divide 40).
    #[arg(long)]
    dobs: Option<String>,
    /// Noise sd as a fraction of each component's range.
    #[arg(long)]
    alpha: Option<String>,
    /// Seeds, e.g. `0,3` or `0..10`.
    #[arg(long, alias = "seeds")]
    seed: Option<String>,
    /// Pilot length; 0 disables the pilot.
    #[arg(long)]
    pilot_len: Option<String>,
    /// Pilot discretization level(s).
    #[arg(long)]
    pilot_disc: Option<String>,
    /// HMC steps of the first pilot.
    #[arg(long)]
    pilot_hmc_steps: Option<String>,
    /// Main discretization level (default log2(40 / dobs)).
    #[arg(long)]
    disc: Option<String>,
    /// HMC steps of the main run (PMSP: first step).
    #[arg(long)]
    hmc_steps: Option<String>,
    /// PMSP HMC steps of the last step (default: --hmc-steps).
    #[arg(long)]
    hmc_peak: Option<String>,
    /// Burn-in ratio of the main run (PMSP: first step).
    #[arg(long)]
    burn_in: Option<String>,
    /// PMSP pilot mode(s): NP, LP, RP, LOP, ROP.
    #[arg(long, alias = "modes")]
    mode: Option<String>,
    /// PMSP prediction horizon.
    #[arg(long)]
    dt_pred: Option<String>,
    /// PMSP step size(s).
    #[arg(long)]
    dt_step: Option<String>,
    /// Fixed sigma for the stability classifier.
    #[arg(long)]
    sigma_override: Option<String>,
    /// Concurrent runs for bench.
    #[arg(long)]
    jobs: Option<String>,
    /// bench method: pmagi or pmsp.
    #[arg(long)]
    method: Option<String>,
    /// Output root (default $MAGIDYN_OUT or ./magidyn-out).
    #[arg(long)]
    out: Option<String>,
    /// Observation CSV to use instead of generating one.
    #[arg(long)]
    data: Option<String>,
    /// CSV with beta, rho, sigma columns.
    #[arg(long)]
    draws: Option<String>,
    /// Trajectory CSV to score.
    #[arg(long)]
    pred: Option<String>,
    /// Reference trajectory CSV (default: the regime's ground truth).
    #[arg(long)]
    truth: Option<String>,
}

impl Flags {
    fn into_config(self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::new();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let pairs = [
            ("regime", self.regime),
            ("tmax", self.tmax),
            ("dobs", self.dobs),
            ("alpha", self.alpha),
            ("seeds", self.seed),
            ("pilot-len", self.pilot_len),
            ("pilot-disc", self.pilot_disc),
            ("pilot-hmc-steps", self.pilot_hmc_steps),
            ("disc", self.disc),
            ("hmc-steps", self.hmc_steps),
            ("hmc-peak", self.hmc_peak),
            ("burn-in", self.burn_in),
            ("mode", self.mode),
            ("dt-pred", self.dt_pred),
            ("dt-step", self.dt_step),
            ("sigma-override", self.sigma_override),
            ("jobs", self.jobs),
            ("method", self.method),
            ("out", self.out),
            ("data", self.data),
            ("draws", self.draws),
            ("pred", self.pred),
            ("truth", self.truth),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.apply(key, &v)?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(f) => {
            let paths = commands::cmd_generate(&f.into_config()?)?;
            println!("wrote {} dataset(s)", paths.len());
            for p in paths {
                println!("{}", p.display());
            }
        }
        Command::Pmagi(f) => {
            let dir = commands::cmd_pmagi(&f.into_config()?)?;
            println!("{}", dir.display());
        }
        Command::Pmsp(f) => {
            let dir = commands::cmd_pmsp(&f.into_config()?)?;
            println!("{}", dir.display());
        }
        Command::Classify(f) => {
            let (path, c) = commands::cmd_classify(&f.into_config()?)?;
            println!(
                "{} stability_probability={} label={}",
                path.display(),
                c.stability_probability,
                c.label
            );
        }
        Command::Metrics(f) => {
            let (path, m) = commands::cmd_metrics(&f.into_config()?)?;
            println!("{}", path.display());
            for (k, v) in &m.smae {
                println!("smae_{k}={v}");
            }
        }
        Command::Bench(f) => {
            let (path, failures) = bench::cmd_bench(&f.into_config()?)?;
            println!("{}", path.display());
            if failures > 0 {
                eprintln!("{failures} run(s) failed; see the error column");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("magidyn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
