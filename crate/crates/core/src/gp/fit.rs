//! Marginal-likelihood fitting of per-component GP hyperparameters.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::bundle::factor_with_jitter;
use super::kernel::{KernelHyper, Matern, PairDerivs};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};

/// Multipliers of the data sd used as starting noise levels.
pub const SIGMA_START_FACTORS: [f64; 3] = [0.01, 0.1, 0.5];

/// `log N(y; mu 1, C + sigma^2 I)` for observations `y` at `times`.
pub fn gp_marginal_loglik(
    y: &[f64],
    times: &[f64],
    hyper: &KernelHyper,
    sigma: f64,
    mu: f64,
) -> Result<f64> {
    if y.len() != times.len() {
        return Err(Error::InvalidArgument("times and values differ in length".into()));
    }
    let n = y.len();
    let pairs = PairDerivs::new(&Matern::default(), times, hyper);
    let mut cov = DMatrix::from_fn(n, n, |i, j| pairs.get(i, j).k);
    for i in 0..n {
        cov[(i, i)] += sigma * sigma;
    }
    let f = factor_with_jitter(&cov)?;
    let r = DVector::from_iterator(n, y.iter().map(|v| v - mu));
    let alpha = f.chol.solve(&r);
    Ok(-0.5 * r.dot(&alpha) - 0.5 * f.logdet - 0.5 * n as f64 * (2.0 * PI).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpFit {
    pub hyper: KernelHyper,
    pub sigma: f64,
    pub mu: f64,
    pub loglik: f64,
}

struct Scales {
    var: f64,
    sd: f64,
    mean: f64,
    span: f64,
    min_dt: f64,
}

fn data_scales(times: &[f64], y: &[f64]) -> Result<Scales> {
    let n = y.len();
    if n < 3 {
        return Err(Error::FitFailed(format!(
            "need at least 3 observations, found {n}"
        )));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 1e-300) || !var.is_finite() {
        return Err(Error::FitFailed("observations are constant".into()));
    }
    let span = times[n - 1] - times[0];
    let min_dt = times
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(span > 0.0) {
        return Err(Error::FitFailed("observation times have zero span".into()));
    }
    Ok(Scales {
        var,
        sd: var.sqrt(),
        mean,
        span,
        min_dt,
    })
}

fn phi2_starts(s: &Scales) -> [f64; 3] {
    [2.0 * s.min_dt, s.span / 8.0, s.span / 2.0]
}

fn feasible(s: &Scales, phi1: f64, phi2: f64, sigma: Option<f64>) -> bool {
    let sigma_ok = sigma.map_or(true, |sg| sg >= 1e-8 * s.sd && sg <= 10.0 * s.sd);
    phi1 >= 1e-8 * s.var
        && phi1 <= 1e4 * s.var
        && phi2 >= 1e-3 * s.min_dt
        && phi2 <= 2.0 * s.span
        && sigma_ok
}

fn nm_options() -> NelderMeadOptions {
    NelderMeadOptions {
        max_evals: 1500,
        f_tol: 1e-10,
        x_tol: 1e-6,
        initial_step: 0.5,
    }
}

fn observed_pairs(times: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    times
        .iter()
        .zip(y)
        .filter(|(_, v)| v.is_finite())
        .map(|(t, v)| (*t, *v))
        .unzip()
}

/// Jointly fits `(phi1, phi2, sigma, mu)` by maximizing the marginal likelihood.
///
/// Non-finite `y` entries are treated as missing. Nelder–Mead runs in
/// `(ln phi1, ln phi2, ln sigma, mu)` from every combination of the
/// `phi2` starts `{2 dt_min, span/8, span/2}` and [`SIGMA_START_FACTORS`], with
/// `phi1` starting at the data variance. Feasible set:
/// `phi1 in [1e-8, 1e4] var`, `phi2 in [1e-3 dt_min, 2 span]`, `sigma in [1e-8, 10] sd`.
pub fn fit_phi_sigma(times: &[f64], y: &[f64]) -> Result<GpFit> {
    let (times, y) = observed_pairs(times, y);
    let s = data_scales(&times, &y)?;
    let objective = |p: &[f64]| -> f64 {
        let (phi1, phi2, sigma, mu) = (p[0].exp(), p[1].exp(), p[2].exp(), p[3]);
        if !feasible(&s, phi1, phi2, Some(sigma)) || (mu - s.mean).abs() > 10.0 * s.sd {
            return f64::INFINITY;
        }
        match gp_marginal_loglik(&y, &times, &KernelHyper { phi1, phi2 }, sigma, mu) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };

    let mut best: Option<GpFit> = None;
    for phi2 in phi2_starts(&s) {
        for fac in SIGMA_START_FACTORS {
            let x0 = [s.var.ln(), phi2.ln(), (fac * s.sd).ln(), s.mean];
            let start_val = objective(&x0);
            let m = nelder_mead(objective, &x0, &nm_options());
            let (x, f) = if m.f <= start_val { (m.x, m.f) } else { (x0.to_vec(), start_val) };
            if !f.is_finite() {
                continue;
            }
            let cand = GpFit {
                hyper: KernelHyper {
                    phi1: x[0].exp(),
                    phi2: x[1].exp(),
                },
                sigma: x[2].exp(),
                mu: x[3],
                loglik: -f,
            };
            if best.map_or(true, |b| cand.loglik > b.loglik) {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| Error::FitFailed("every multi-start candidate failed".into()))
}

/// Fits `(phi1, phi2)` with the noise level held at `sigma` and the mean at the data mean.
pub fn fit_phi_given_sigma(times: &[f64], y: &[f64], sigma: f64) -> Result<GpFit> {
    let (times, y) = observed_pairs(times, y);
    let s = data_scales(&times, &y)?;
    let objective = |p: &[f64]| -> f64 {
        let (phi1, phi2) = (p[0].exp(), p[1].exp());
        if !feasible(&s, phi1, phi2, None) {
            return f64::INFINITY;
        }
        match gp_marginal_loglik(&y, &times, &KernelHyper { phi1, phi2 }, sigma, s.mean) {
            Ok(v) => -v,
            Err(_) => f64::INFINITY,
        }
    };
    let mut best: Option<GpFit> = None;
    for phi2 in phi2_starts(&s) {
        let x0 = [s.var.ln(), phi2.ln()];
        let start_val = objective(&x0);
        let m = nelder_mead(objective, &x0, &nm_options());
        let (x, f) = if m.f <= start_val { (m.x, m.f) } else { (x0.to_vec(), start_val) };
        if !f.is_finite() {
            continue;
        }
        let cand = GpFit {
            hyper: KernelHyper {
                phi1: x[0].exp(),
                phi2: x[1].exp(),
            },
            sigma,
            mu: s.mean,
            loglik: -f,
        };
        if best.map_or(true, |b| cand.loglik > b.loglik) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::FitFailed("every multi-start candidate failed".into()))
}
