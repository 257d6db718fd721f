//! The manifold-constrained log posterior over `(X, theta, log sigma)`.
//!
//! For each component `i`, with `u_i = x_i - mu_i` (centered by the observed
//! mean) and the component's [`KernelBundle`]:
//!
//! ```text
//! (a)  -1/2 u_i^T C_i^{-1} u_i - 1/2 log|C_i|
//! (b)  -N_i log sigma_i - 1/2 sum_obs (x_i(t) - y_i(t))^2 / sigma_i^2
//! (c)  -1/2 r_i^T K_i^{-1} r_i - 1/2 log|K_i|,     r_i = f_i(X, theta) - m_i u_i
//! ```
//!
//! plus the box prior on `theta` and, when noise is sampled, a flat prior on
//! `log sigma`. Additive constants are dropped. Terms (a) and (c) may be divided
//! by a temperature (1 by default).
//!
//! Flattened position: `X` column-major by component (`x[i * n + t]`), then
//! `theta`, then `log sigma` if sampled.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::grid::DiscretizedGrid;
use crate::error::{Error, Result};
use crate::gp::KernelBundle;
use crate::hmc::Target;
use crate::ode::OdeSystem;
use crate::testbed::ObservationSet;

/// Support of the flat prior on `log sigma`.
pub const LOG_SIGMA_MIN: f64 = -13.815_510_557_964_274; // ln 1e-6
pub const LOG_SIGMA_MAX: f64 = 6.907_755_278_982_137; // ln 1e3

/// Independent uniform priors on each parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrior {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaPrior {
    pub fn uniform(p: usize, lower: f64, upper: f64) -> Self {
        ThetaPrior {
            lower: vec![lower; p],
            upper: vec![upper; p],
        }
    }

    /// The default `[0, 100]` box.
    pub fn default_for(p: usize) -> Self {
        Self::uniform(p, 0.0, 100.0)
    }

    pub fn median(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        if self.contains(theta) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Fixed(Vec<f64>),
    Sampled,
}

/// The sampling state, unflattened.
#[derive(Debug, Clone, PartialEq)]
pub struct MagiState {
    /// `n x d`, column-major by component.
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub log_sigma: Option<Vec<f64>>,
}

impl MagiState {
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.theta);
        if let Some(ls) = &self.log_sigma {
            v.extend_from_slice(ls);
        }
        v
    }
}

/// Individual posterior terms, summed over components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTerms {
    pub gp_prior: f64,
    pub likelihood: f64,
    pub ode: f64,
    pub theta_prior: f64,
}

impl PosteriorTerms {
    pub fn total(&self, temperature: f64) -> f64 {
        (self.gp_prior + self.ode) / temperature + self.likelihood + self.theta_prior
    }
}

pub struct MagiPosterior<'a> {
    system: &'a dyn OdeSystem,
    times: Vec<f64>,
    n: usize,
    d: usize,
    p: usize,
    obs: Vec<Vec<(usize, f64)>>,
    means: Vec<f64>,
    bundles: Vec<KernelBundle>,
    prior: ThetaPrior,
    noise: NoiseModel,
    temperature: f64,
}

/// Observed `(grid index, value)` pairs per component.
pub fn observations_on_grid(
    obs: &ObservationSet,
    grid: &DiscretizedGrid,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if obs.len() != grid.tau_obs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} observation rows but the grid has {} observation times",
            obs.len(),
            grid.tau_obs.len()
        )));
    }
    for (a, b) in obs.times.iter().zip(&grid.tau_obs) {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "observation time {a} does not match grid time {b}"
            )));
        }
    }
    Ok((0..obs.dim())
        .map(|c| {
            (0..obs.len())
                .filter_map(|r| obs.get(r, c).map(|v| (grid.obs_index[r], v)))
                .collect()
        })
        .collect())
}

impl<'a> MagiPosterior<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        system: &'a dyn OdeSystem,
        times: Vec<f64>,
        obs: Vec<Vec<(usize, f64)>>,
        means: Vec<f64>,
        bundles: Vec<KernelBundle>,
        prior: ThetaPrior,
        noise: NoiseModel,
    ) -> Result<Self> {
        let d = system.dim();
        let p = system.n_params();
        let n = times.len();
        if obs.len() != d || means.len() != d || bundles.len() != d {
            return Err(Error::InvalidArgument(
                "observations, means and bundles need one entry per component".into(),
            ));
        }
        if bundles.iter().any(|b| b.len() != n) {
            return Err(Error::InvalidArgument("bundle grid does not match times".into()));
        }
        if prior.lower.len() != p || prior.upper.len() != p {
            return Err(Error::InvalidArgument("prior dimension does not match system".into()));
        }
        if let NoiseModel::Fixed(s) = &noise {
            if s.len() != d || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidArgument(
                    "fixed noise levels must be positive, one per component".into(),
                ));
            }
        }
        if obs.iter().flatten().any(|(i, _)| *i >= n) {
            return Err(Error::InvalidArgument("observation index outside grid".into()));
        }
        Ok(MagiPosterior {
            system,
            times,
            n,
            d,
            p,
            obs,
            means,
            bundles,
            prior,
            noise,
            temperature: 1.0,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature > 0.0);
        self.temperature = temperature;
        self
    }

    pub fn n_grid(&self) -> usize {
        self.n
    }

    pub fn samples_sigma(&self) -> bool {
        matches!(self.noise, NoiseModel::Sampled)
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn bundles(&self) -> &[KernelBundle] {
        &self.bundles
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn prior(&self) -> &ThetaPrior {
        &self.prior
    }

    pub fn n_coords(&self) -> usize {
        self.n * self.d + self.p + if self.samples_sigma() { self.d } else { 0 }
    }

    pub fn unflatten(&self, pos: &[f64]) -> MagiState {
        let nd = self.n * self.d;
        MagiState {
            x: pos[..nd].to_vec(),
            theta: pos[nd..nd + self.p].to_vec(),
            log_sigma: self
                .samples_sigma()
                .then(|| pos[nd + self.p..nd + self.p + self.d].to_vec()),
        }
    }

    fn sigmas(&self, pos: &[f64]) -> Vec<f64> {
        match &self.noise {
            NoiseModel::Fixed(s) => s.clone(),
            NoiseModel::Sampled => {
                let off = self.n * self.d + self.p;
                pos[off..off + self.d].iter().map(|v| v.exp()).collect()
            }
        }
    }

    /// ODE field and Jacobians at every grid time.
    fn field(&self, x: &[f64], theta: &[f64], with_jac: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, d, p) = (self.n, self.d, self.p);
        let mut f = vec![0.0; n * d];
        let mut jx = if with_jac { vec![0.0; n * d * d] } else { Vec::new() };
        let mut jt = if with_jac { vec![0.0; n * d * p] } else { Vec::new() };
        let mut state = vec![0.0; d];
        let mut out = vec![0.0; d];
        for t in 0..n {
            for i in 0..d {
                state[i] = x[i * n + t];
            }
            self.system.rhs(&state, self.times[t], theta, &mut out);
            for i in 0..d {
                f[i * n + t] = out[i];
            }
            if with_jac {
                self.system
                    .grad_x(&state, self.times[t], theta, &mut jx[t * d * d..(t + 1) * d * d]);
                self.system
                    .grad_theta(&state, self.times[t], theta, &mut jt[t * d * p..(t + 1) * d * p]);
            }
        }
        (f, jx, jt)
    }

    /// Posterior terms, and the gradient of the total when `grad` is given.
    pub fn evaluate(&self, pos: &[f64], mut grad: Option<&mut [f64]>) -> PosteriorTerms {
        let (n, d, p) = (self.n, self.d, self.p);
        let nd = n * d;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = &pos[..nd];
        let theta = &pos[nd..nd + p];
        let mut terms = PosteriorTerms {
            gp_prior: 0.0,
            likelihood: 0.0,
            ode: 0.0,
            theta_prior: self.prior.log_density(theta),
        };
        if self.samples_sigma()
            && pos[nd + p..nd + p + d]
                .iter()
                .any(|v| !(*v >= LOG_SIGMA_MIN && *v <= LOG_SIGMA_MAX))
        {
            terms.theta_prior = f64::NEG_INFINITY;
        }
        if !terms.theta_prior.is_finite() {
            return terms;
        }

        let with_grad = grad.is_some();
        let (f, jx, jt) = self.field(x, theta, with_grad);
        let inv_t = 1.0 / self.temperature;
        let mut vs = vec![0.0; nd];

        for i in 0..d {
            let b = &self.bundles[i];
            let u = DVector::from_iterator(n, x[i * n..(i + 1) * n].iter().map(|v| v - self.means[i]));
            let a = &b.c_inv * &u;
            terms.gp_prior += -0.5 * u.dot(&a) - 0.5 * b.logdet_c;
            let mu_d = &b.m * &u;
            let r = DVector::from_iterator(n, (0..n).map(|t| f[i * n + t] - mu_d[t]));
            let v = &b.k_inv * &r;
            terms.ode += -0.5 * r.dot(&v) - 0.5 * b.logdet_k;
            if let Some(g) = grad.as_deref_mut() {
                let mtv = b.m.tr_mul(&v);
                for t in 0..n {
                    g[i * n + t] += inv_t * (mtv[t] - a[t]);
                }
                vs[i * n..(i + 1) * n].copy_from_slice(v.as_slice());
            }
        }

        if let Some(g) = grad.as_deref_mut() {
            for t in 0..n {
                let jxt = &jx[t * d * d..(t + 1) * d * d];
                let jtt = &jt[t * d * p..(t + 1) * d * p];
                for i in 0..d {
                    let w = inv_t * vs[i * n + t];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        g[j * n + t] -= w * jxt[i * d + j];
                    }
                    for k in 0..p {
                        g[nd + k] -= w * jtt[i * p + k];
                    }
                }
            }
        }

        let sigmas = self.sigmas(pos);
        for i in 0..d {
            let s2 = sigmas[i] * sigmas[i];
            let mut ss = 0.0;
            for &(t, y) in &self.obs[i] {
                let res = x[i * n + t] - y;
                ss += res * res;
                if let Some(g) = grad.as_deref_mut() {
                    g[i * n + t] -= res / s2;
                }
            }
            let n_i = self.obs[i].len() as f64;
            terms.likelihood += -n_i * sigmas[i].ln() - 0.5 * ss / s2;
            if self.samples_sigma() {
                if let Some(g) = grad.as_deref_mut() {
                    g[nd + p + i] += -n_i + ss / s2;
                }
            }
        }
        terms
    }

    pub fn log_posterior(&self, pos: &[f64]) -> f64 {
        self.evaluate(pos, None).total(self.temperature)
    }

    /// Returns the log posterior and writes its gradient.
    pub fn log_posterior_grad(&self, pos: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(pos, Some(grad)).total(self.temperature)
    }

    /// `max_{t,i} |m_i u_i - f_i|`: how far the GP derivative is from the ODE field.
    pub fn manifold_discrepancy(&self, x: &[f64], theta: &[f64]) -> f64 {
        let n = self.n;
        let (f, _, _) = self.field(x, theta, false);
        let mut w: f64 = 0.0;
        for i in 0..self.d {
            let u = DVector::from_iterator(n, x[i * n..(i + 1) * n].iter().map(|v| v - self.means[i]));
            let mu_d = &self.bundles[i].m * &u;
            for t in 0..n {
                w = w.max((mu_d[t] - f[i * n + t]).abs());
            }
        }
        w
    }
}

impl Target for MagiPosterior<'_> {
    fn dim(&self) -> usize {
        self.n_coords()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(x, grad)
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior(x)
    }
}
