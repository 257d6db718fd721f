//! Leapfrog integration and Hamiltonian Monte Carlo with burn-in adaptation.
//!
//! The Hamiltonian is `H(q, p) = -log pi(q) + p^T M^{-1} p / 2` with a diagonal
//! mass `M`. Burn-in adapts the step size by dual averaging toward a target
//! acceptance rate and, optionally, the diagonal mass from windowed sample
//! variances. Both are frozen once burn-in ends.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A log-density with gradient.
pub trait Target {
    fn dim(&self) -> usize;

    /// Returns `log pi(x)` and writes its gradient into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut g)
    }
}

/// Adapts a closure `f(x, grad) -> log pi(x)` to [`Target`].
pub struct FnTarget<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> FnTarget<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnTarget { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64> Target for FnTarget<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmcSettings {
    /// Chain length including the initial state.
    pub n_steps: usize,
    pub burn_in_ratio: f64,
    pub leapfrog_steps: usize,
    /// Initial step size; `None` picks one with the doubling/halving heuristic.
    pub step_size: Option<f64>,
    /// Diagonal mass; `None` means identity.
    pub mass: Option<Vec<f64>>,
    pub target_accept: f64,
    pub adapt_step_size: bool,
    /// Re-estimate the diagonal mass from burn-in draws.
    pub adapt_mass: bool,
    /// Each iteration scales the step size by a uniform factor in `[1 - j, 1 + j]`.
    pub step_jitter: f64,
    pub seed: u64,
}

impl Default for HmcSettings {
    fn default() -> Self {
        HmcSettings {
            n_steps: 2001,
            burn_in_ratio: 0.5,
            leapfrog_steps: 20,
            step_size: None,
            mass: None,
            target_accept: 0.75,
            adapt_step_size: true,
            adapt_mass: false,
            step_jitter: 0.0,
            seed: 0,
        }
    }
}

impl HmcSettings {
    /// States discarded as burn-in (the initial state counts as one).
    pub fn n_burn(&self) -> usize {
        (self.burn_in_ratio * self.n_steps as f64).ceil() as usize
    }

    pub fn n_kept(&self) -> usize {
        self.n_steps - self.n_burn().min(self.n_steps)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_steps < 1 {
            return bad("n_steps must be >= 1");
        }
        if !(0.0..1.0).contains(&self.burn_in_ratio) {
            return bad("burn_in_ratio must lie in [0, 1)");
        }
        if self.leapfrog_steps < 1 {
            return bad("leapfrog_steps must be >= 1");
        }
        if let Some(e) = self.step_size {
            if !(e > 0.0 && e.is_finite()) {
                return bad("step_size must be positive");
            }
        }
        if let Some(m) = &self.mass {
            if m.len() != dim || m.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad("mass must have one positive entry per coordinate");
            }
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.step_jitter) {
            return bad("step_jitter must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutput {
    pub dim: usize,
    /// Kept draws, row-major `n_kept x dim`.
    pub samples: Vec<f64>,
    /// Log density of each kept draw.
    pub log_density: Vec<f64>,
    /// Acceptance rate over post-burn-in proposals (all proposals if there are none).
    pub accept_rate: f64,
    pub burn_in_accept_rate: f64,
    pub step_size: f64,
    pub mass: Vec<f64>,
    /// Proposals whose trajectory produced a non-finite state or Hamiltonian.
    pub divergences: usize,
}

impl ChainOutput {
    pub fn n_kept(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.samples.len() / self.dim
        }
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.n_kept().checked_sub(1).map(|i| self.draw(i))
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.n_kept() as f64;
        let mut m = vec![0.0; self.dim];
        for i in 0..self.n_kept() {
            for (a, b) in m.iter_mut().zip(self.draw(i)) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// In-place leapfrog with a cached gradient at the start; returns the final log density.
///
/// `grad` holds the gradient at `q` on entry and at the final `q` on exit.
fn leapfrog_in_place<T: Target + ?Sized>(
    target: &T,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Result<f64> {
    let mut logp = f64::NAN;
    for _ in 0..steps {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
            q[i] += eps * inv_mass[i] * p[i];
        }
        logp = target.log_density_grad(q, grad);
        for i in 0..q.len() {
            p[i] += 0.5 * eps * grad[i];
        }
        if !logp.is_finite() || !all_finite(q) || !all_finite(p) || !all_finite(grad) {
            return Err(Error::NonFiniteState);
        }
    }
    if steps == 0 {
        logp = target.log_density_grad(q, grad);
    }
    Ok(logp)
}

/// `L` leapfrog steps from `(theta, phi)`: half momentum kick, drift by
/// `eps M^{-1} phi`, half kick. Returns the end point.
pub fn leapfrog<T: Target + ?Sized>(
    target: &T,
    theta: &[f64],
    phi: &[f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut q = theta.to_vec();
    let mut p = phi.to_vec();
    let mut g = vec![0.0; q.len()];
    let lp = target.log_density_grad(&q, &mut g);
    if !lp.is_finite() || !all_finite(&g) {
        return Err(Error::NonFiniteState);
    }
    leapfrog_in_place(target, &mut q, &mut p, &mut g, eps, steps, inv_mass)?;
    Ok((q, p))
}

pub fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(a, m)| a * a * m).sum::<f64>()
}

/// Dual averaging of `log eps` toward a target acceptance probability.
#[derive(Debug, Clone)]
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps: f64, target: f64) -> Self {
        DualAveraging {
            mu: (10.0 * eps).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            t: 0.0,
        }
    }

    fn update(&mut self, accept_prob: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - self.t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = self.t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn final_eps(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Online mean/variance accumulator.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Variance shrunk toward a small multiple of the current scale.
    fn regularized_var(&self, fallback: &[f64]) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .zip(fallback)
            .map(|(m2, fb)| {
                let var = m2 / (n - 1.0).max(1.0);
                let v = (n / (n + 5.0)) * var + 1e-3 * fb * (5.0 / (n + 5.0));
                if v > 0.0 && v.is_finite() {
                    v
                } else {
                    *fb
                }
            })
            .collect()
    }
}

/// Burn-in windows `[start, end)` (iteration indices) used for mass estimation.
///
/// After an initial 15% buffer, windows start at 25 iterations and double, the
/// last one stretching to 90% of burn-in. Short early windows let a chain that
/// starts far from the mode rescale before it has settled.
fn mass_windows(n_burn: usize) -> Vec<(usize, usize)> {
    if n_burn < 40 {
        return Vec::new();
    }
    let start = (0.15 * n_burn as f64) as usize;
    let end = (0.9 * n_burn as f64) as usize;
    let mut windows = Vec::new();
    let (mut a, mut len) = (start, 25usize.min(end - start));
    while a < end {
        let b = if a + 3 * len > end { end } else { a + len };
        windows.push((a, b));
        a = b;
        len *= 2;
    }
    windows
}

fn metropolis_prob(h_old: f64, h_new: f64) -> f64 {
    if h_new.is_finite() {
        (h_old - h_new).exp().min(1.0)
    } else {
        0.0
    }
}

/// Heuristic initial step: double or halve until a one-step acceptance probability crosses 1/2.
pub fn find_reasonable_step_size<T: Target + ?Sized>(
    target: &T,
    q: &[f64],
    inv_mass: &[f64],
    rng: &mut impl Rng,
) -> f64 {
    let dim = q.len();
    let mut g0 = vec![0.0; dim];
    let lp0 = target.log_density_grad(q, &mut g0);
    let mut eps: f64 = 1.0;
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|m| rng.sample::<f64, _>(StandardNormal) / m.sqrt())
        .collect();
    let h0 = -lp0 + kinetic(&p0, inv_mass);
    let log_ratio = |eps: f64| -> f64 {
        let mut qq = q.to_vec();
        let mut pp = p0.clone();
        let mut gg = g0.clone();
        match leapfrog_in_place(target, &mut qq, &mut pp, &mut gg, eps, 1, inv_mass) {
            Ok(lp) => {
                let h = -lp + kinetic(&pp, inv_mass);
                if h.is_finite() {
                    h0 - h
                } else {
                    f64::NEG_INFINITY
                }
            }
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let ln_half = 0.5f64.ln();
    let up = log_ratio(eps) > ln_half;
    for _ in 0..100 {
        let r = log_ratio(eps);
        if up && r <= ln_half {
            return eps / 2.0;
        }
        if !up && r > ln_half {
            return eps;
        }
        eps = if up { eps * 2.0 } else { eps / 2.0 };
    }
    eps
}

/// Runs one HMC chain from `init`.
pub fn hmc_sample<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    settings: &HmcSettings,
) -> Result<ChainOutput> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} coordinates, target has {dim}",
            init.len()
        )));
    }
    settings.validate(dim)?;

    let mut rng = ChaCha20Rng::seed_from_u64(settings.seed);
    let mut mass = settings.mass.clone().unwrap_or_else(|| vec![1.0; dim]);
    let mut inv_mass: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();

    let mut q = init.to_vec();
    let mut grad = vec![0.0; dim];
    let mut logp = target.log_density_grad(&q, &mut grad);
    if !logp.is_finite() || !all_finite(&grad) {
        return Err(Error::InvalidArgument(
            "log density or gradient is not finite at the initial state".into(),
        ));
    }

    let mut eps = match settings.step_size {
        Some(e) => e,
        None => find_reasonable_step_size(target, &q, &inv_mass, &mut rng),
    };
    let n_burn = settings.n_burn().min(settings.n_steps);
    let adapting = settings.adapt_step_size && n_burn > 1;
    let mut da = DualAveraging::new(eps, settings.target_accept);
    let windows = if settings.adapt_mass {
        mass_windows(n_burn)
    } else {
        Vec::new()
    };
    let mut window_stats = Welford::new(dim);

    let n_kept = settings.n_kept();
    let mut samples = Vec::with_capacity(n_kept * dim);
    let mut log_density = Vec::with_capacity(n_kept);
    if n_burn == 0 {
        samples.extend_from_slice(&q);
        log_density.push(logp);
    }

    let mut divergences = 0usize;
    let (mut acc_burn, mut n_burn_prop) = (0usize, 0usize);
    let (mut acc_main, mut n_main_prop) = (0usize, 0usize);

    let mut q_new = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];

    // State index `it` is produced by proposal number `it`; state 0 is `init`.
    for it in 1..settings.n_steps {
        let in_burn = it < n_burn;
        for i in 0..dim {
            p[i] = rng.sample::<f64, _>(StandardNormal) * mass[i].sqrt();
        }
        let h_old = -logp + kinetic(&p, &inv_mass);
        let jitter = if settings.step_jitter > 0.0 {
            1.0 + settings.step_jitter * (2.0 * rng.random::<f64>() - 1.0)
        } else {
            1.0
        };
        q_new.copy_from_slice(&q);
        g_new.copy_from_slice(&grad);
        let result = leapfrog_in_place(
            target,
            &mut q_new,
            &mut p,
            &mut g_new,
            eps * jitter,
            settings.leapfrog_steps,
            &inv_mass,
        );
        let (accept_prob, lp_new) = match result {
            Ok(lp) => {
                let h_new = -lp + kinetic(&p, &inv_mass);
                if !h_new.is_finite() {
                    divergences += 1;
                }
                (metropolis_prob(h_old, h_new), lp)
            }
            Err(_) => {
                divergences += 1;
                (0.0, f64::NAN)
            }
        };
        let u: f64 = rng.random();
        let accepted = accept_prob > 0.0 && u < accept_prob;
        if accepted {
            std::mem::swap(&mut q, &mut q_new);
            std::mem::swap(&mut grad, &mut g_new);
            logp = lp_new;
        }

        if in_burn {
            n_burn_prop += 1;
            acc_burn += accepted as usize;
            if adapting {
                eps = da.update(accept_prob);
            }
            if let Some(w) = windows.iter().position(|&(s, e)| it >= s && it < e) {
                window_stats.push(&q);
                if it + 1 == windows[w].1 && window_stats.n >= 10 {
                    let var = window_stats.regularized_var(&inv_mass);
                    inv_mass = var;
                    mass = inv_mass.iter().map(|v| 1.0 / v).collect();
                    window_stats = Welford::new(dim);
                    if adapting {
                        eps = find_reasonable_step_size(target, &q, &inv_mass, &mut rng);
                        da = DualAveraging::new(eps, settings.target_accept);
                    }
                }
            }
            if it + 1 == n_burn && adapting {
                eps = da.final_eps();
            }
        } else {
            n_main_prop += 1;
            acc_main += accepted as usize;
            samples.extend_from_slice(&q);
            log_density.push(logp);
        }
    }

    let rate = |a: usize, n: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    Ok(ChainOutput {
        dim,
        samples,
        log_density,
        accept_rate: if n_main_prop > 0 {
            rate(acc_main, n_main_prop)
        } else {
            rate(acc_burn, n_burn_prop)
        },
        burn_in_accept_rate: rate(acc_burn, n_burn_prop),
        step_size: eps,
        mass,
        divergences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn std_normal() -> FnTarget<impl Fn(&[f64], &mut [f64]) -> f64> {
        FnTarget::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = -x[0];
            -0.5 * x[0] * x[0]
        })
    }

    #[test]
    fn one_step_by_hand() {
        let eps = 0.3;
        let (q, p) = leapfrog(&std_normal(), &[0.0], &[1.0], eps, 1, &[1.0]).unwrap();
        assert!((q[0] - eps).abs() < 1e-15);
        assert!((p[0] - (1.0 - 0.5 * eps * eps)).abs() < 1e-15);
    }

    #[test]
    fn zero_step_is_identity() {
        let (q, p) = leapfrog(&std_normal(), &[0.4], &[-1.3], 0.0, 5, &[1.0]).unwrap();
        assert_eq!((q[0], p[0]), (0.4, -1.3));
    }

    #[test]
    fn kept_count_uses_ceiling_burn_in() {
        let s = HmcSettings {
            n_steps: 16001,
            burn_in_ratio: 0.5,
            ..Default::default()
        };
        assert_eq!(s.n_kept(), 8000);
        let s = HmcSettings {
            n_steps: 101,
            burn_in_ratio: 0.2,
            ..Default::default()
        };
        assert_eq!(s.n_kept(), 101 - 21);
    }

    #[test]
    fn output_length_matches_settings() {
        let s = HmcSettings {
            n_steps: 301,
            burn_in_ratio: 0.5,
            leapfrog_steps: 5,
            seed: 3,
            ..Default::default()
        };
        let out = hmc_sample(&std_normal(), &[0.0], &s).unwrap();
        assert_eq!(out.n_kept(), s.n_kept());
        assert_eq!(out.log_density.len(), s.n_kept());
        let s0 = HmcSettings {
            burn_in_ratio: 0.0,
            ..s
        };
        let out = hmc_sample(&std_normal(), &[0.0], &s0).unwrap();
        assert_eq!(out.n_kept(), 301);
        assert_eq!(out.draw(0), &[0.0]);
    }

    #[test]
    fn divergent_proposals_are_rejections() {
        // Density that is -inf for x > 1: large steps from near the edge diverge.
        let t = FnTarget::new(1, |x: &[f64], g: &mut [f64]| {
            if x[0] > 1.0 {
                g[0] = 0.0;
                f64::NEG_INFINITY
            } else {
                g[0] = -x[0];
                -0.5 * x[0] * x[0]
            }
        });
        let s = HmcSettings {
            n_steps: 500,
            burn_in_ratio: 0.0,
            leapfrog_steps: 3,
            step_size: Some(0.8),
            adapt_step_size: false,
            seed: 1,
            ..Default::default()
        };
        let out = hmc_sample(&t, &[0.0], &s).unwrap();
        assert!(out.divergences > 0);
        assert!(out.samples.iter().all(|v| *v <= 1.0));
    }

    #[test]
    fn deterministic_for_seed() {
        let s = HmcSettings {
            n_steps: 200,
            seed: 42,
            adapt_mass: true,
            step_jitter: 0.1,
            ..Default::default()
        };
        let a = hmc_sample(&std_normal(), &[0.5], &s).unwrap();
        let b = hmc_sample(&std_normal(), &[0.5], &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mass_windows_double_and_tile_the_adaptation_span() {
        assert!(mass_windows(39).is_empty());
        let w = mass_windows(8000);
        assert_eq!(w[0], (1200, 1225));
        assert_eq!(w.last().unwrap().1, 7200);
        for pair in w.windows(2) {
            assert_eq!(pair[0].1, pair[1].0);
        }
        for (i, &(a, b)) in w.iter().enumerate().take(w.len() - 1) {
            assert_eq!(b - a, 25 << i);
        }
        let (a, b) = *w.last().unwrap();
        assert!(b - a >= 25 << (w.len() - 1));
        let short = mass_windows(40);
        assert_eq!(short.first().unwrap().0, 6);
        assert_eq!(short.last().unwrap().1, 36);
    }

    #[test]
    fn mass_adaptation_learns_scales() {
        let scales = [0.01, 1.0, 30.0];
        let t = FnTarget::new(3, move |x: &[f64], g: &mut [f64]| {
            let mut lp = 0.0;
            for i in 0..3 {
                g[i] = -x[i] / (scales[i] * scales[i]);
                lp -= 0.5 * (x[i] / scales[i]).powi(2);
            }
            lp
        });
        let s = HmcSettings {
            n_steps: 4000,
            adapt_mass: true,
            leapfrog_steps: 10,
            seed: 9,
            ..Default::default()
        };
        let out = hmc_sample(&t, &[0.0, 0.0, 0.0], &s).unwrap();
        for i in 0..3 {
            let ratio = (1.0 / out.mass[i]).sqrt() / scales[i];
            assert!(ratio > 0.5 && ratio < 2.0, "coord {i}: {ratio}");
        }
        assert!(out.accept_rate > 0.5);
    }
}
