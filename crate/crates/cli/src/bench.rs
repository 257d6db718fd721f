//! Benchmark sweeps: run the cross product of settings and aggregate metrics into a
//! long-format CSV, one row per run per metric.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use magidyn::analysis::MetricReport;

use crate::commands::{pmagi_metrics, pmsp_metrics, run_pmagi, run_pmsp};
use crate::config::{Method, RunConfig, RunSpec};
use crate::error::{CliError, CliResult};

pub const BENCH_HEADER: &str =
    "run,regime,tmax,dobs,alpha,seed,method,pilot_len,pilot_disc,mode,dt_pred,dt_step,metric,value,error";

/// Flattens a free-text cell to one line and quotes it when it holds commas or quotes.
fn csv_cell(s: &str) -> String {
    let s = s.replace(['\n', '\r'], " ");
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Metric name/value pairs of one finished run.
fn metric_rows(report: Option<&MetricReport>, accept_rate: f64) -> Vec<(String, f64)> {
    let mut rows = vec![("accept_rate".to_string(), accept_rate)];
    if let Some(r) = report {
        rows.extend(r.theta_scaled_l1.iter().map(|(k, v)| (format!("scaled_l1_{k}"), *v)));
        rows.extend(r.smae.iter().map(|(k, v)| (format!("smae_{k}"), *v)));
        if let Some(p) = r.stability_probability {
            rows.push(("stability_probability".into(), p));
        }
    }
    rows
}

fn execute(cfg: &RunConfig, run: &RunSpec) -> CliResult<Vec<(String, f64)>> {
    match cfg.method {
        Method::Pmagi => {
            let r = run_pmagi(cfg, run)?;
            let m = pmagi_metrics(&r, cfg.sigma_override)?;
            Ok(metric_rows(m.as_ref(), r.output.main.accept_rate))
        }
        Method::Pmsp => {
            let r = run_pmsp(cfg, run, &mut |_| Ok(()))?;
            let m = pmsp_metrics(&r, cfg.sigma_override)?;
            Ok(metric_rows(m.as_ref(), r.output.final_samples().accept_rate))
        }
    }
}

fn format_rows(cfg: &RunConfig, index: usize, run: &RunSpec, result: &CliResult<Vec<(String, f64)>>) -> String {
    let method = match cfg.method {
        Method::Pmagi => "pmagi",
        Method::Pmsp => "pmsp",
    };
    let prefix = format!(
        "{index},{},{},{},{},{},{method},{},{},{},{},{}",
        run.regime, run.tmax, run.dobs, run.alpha, run.seed, run.pilot_len, run.pilot_disc, run.mode,
        cfg.dt_pred, run.dt_step
    );
    match result {
        Ok(rows) => rows
            .iter()
            .map(|(k, v)| format!("{prefix},{k},{v},\n"))
            .collect(),
        Err(e) => format!("{prefix},run,NaN,{}\n", csv_cell(&e.to_string())),
    }
}

/// Runs the sweep with up to `cfg.jobs` concurrent runs. Rows are appended in run
/// order as soon as every earlier run has finished, so the file is identical for
/// any job count and a crash keeps all rows written so far. Failed runs become
/// rows with an error message and the sweep continues.
pub fn cmd_bench(cfg: &RunConfig) -> CliResult<(PathBuf, usize)> {
    cfg.validate()?;
    let runs = cfg.sweep();
    let dir = cfg.out.join("bench");
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("results.csv");
    let mut file = File::create(&path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let io_err = |e: std::io::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    writeln!(file, "{BENCH_HEADER}").map_err(io_err)?;

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, String, bool)>();
    let mut failures = 0;
    std::thread::scope(|scope| -> CliResult<()> {
        for _ in 0..cfg.jobs.min(runs.len()).max(1) {
            let tx = tx.clone();
            let (next, runs) = (&next, &runs);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let result = execute(cfg, run);
                let rows = format_rows(cfg, i, run, &result);
                if tx.send((i, rows, result.is_err())).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut written = 0;
        for (i, rows, failed) in rx {
            failures += usize::from(failed);
            pending.insert(i, rows);
            while let Some(rows) = pending.remove(&written) {
                file.write_all(rows.as_bytes()).map_err(io_err)?;
                file.flush().map_err(io_err)?;
                written += 1;
            }
        }
        Ok(())
    })?;
    Ok((path, failures))
}
