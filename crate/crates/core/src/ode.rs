//! ODE systems, the Lorenz instance, and an adaptive Runge–Kutta integrator.
//!
//! Parameter vectors for Lorenz are always ordered `(beta, rho, sigma)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A first-order ODE system `dx/dt = f(x, t; theta)` with analytic Jacobians.
///
/// Jacobians are written row-major: `grad_x[i * dim + j] = df_i/dx_j` and
/// `grad_theta[i * n_params + k] = df_i/dtheta_k`.
pub trait OdeSystem: Sync {
    fn dim(&self) -> usize;
    fn n_params(&self) -> usize;
    fn rhs(&self, x: &[f64], t: f64, theta: &[f64], out: &mut [f64]);
    fn grad_x(&self, x: &[f64], t: f64, theta: &[f64], out: &mut [f64]);
    fn grad_theta(&self, x: &[f64], t: f64, theta: &[f64], out: &mut [f64]);

    fn param_names(&self) -> Vec<String> {
        (0..self.n_params()).map(|k| format!("theta{k}")).collect()
    }

    fn component_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Lorenz parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub beta: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl Theta {
    pub const fn new(beta: f64, rho: f64, sigma: f64) -> Self {
        Theta { beta, rho, sigma }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.beta, self.rho, self.sigma]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Theta::new(v[0], v[1], v[2])
    }
}

/// A point in Lorenz phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        State3 { x, y, z }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        State3::new(v[0], v[1], v[2])
    }
}

pub fn lorenz_f(s: State3, th: Theta) -> State3 {
    State3::new(
        th.sigma * (s.y - s.x),
        s.x * (th.rho - s.z) - s.y,
        s.x * s.y - th.beta * s.z,
    )
}

pub fn lorenz_grad_x(s: State3, th: Theta) -> [[f64; 3]; 3] {
    [
        [-th.sigma, th.sigma, 0.0],
        [th.rho - s.z, -1.0, -s.x],
        [s.y, s.x, -th.beta],
    ]
}

pub fn lorenz_grad_theta(s: State3, _th: Theta) -> [[f64; 3]; 3] {
    [[0.0, 0.0, s.y - s.x], [0.0, s.x, 0.0], [-s.z, 0.0, 0.0]]
}

/// Critical `rho` above which the two non-origin fixed points lose stability.
pub fn rho_critical(beta: f64, sigma: f64) -> Result<f64> {
    let denom = sigma - beta - 1.0;
    if denom == 0.0 {
        return Err(Error::DegenerateThreshold { beta, sigma });
    }
    Ok(sigma * (sigma + beta + 3.0) / denom)
}

/// Non-origin stationary points `(±sqrt(beta(rho-1)), ±sqrt(beta(rho-1)), rho-1)`; empty for `rho <= 1`.
pub fn lorenz_fixed_points(th: Theta) -> Vec<State3> {
    if th.rho <= 1.0 {
        return Vec::new();
    }
    let r = (th.beta * (th.rho - 1.0)).sqrt();
    vec![
        State3::new(r, r, th.rho - 1.0),
        State3::new(-r, -r, th.rho - 1.0),
    ]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Lorenz;

impl OdeSystem for Lorenz {
    fn dim(&self) -> usize {
        3
    }

    fn n_params(&self) -> usize {
        3
    }

    fn rhs(&self, x: &[f64], _t: f64, theta: &[f64], out: &mut [f64]) {
        let f = lorenz_f(State3::from_slice(x), Theta::from_slice(theta));
        out[..3].copy_from_slice(&f.to_array());
    }

    fn grad_x(&self, x: &[f64], _t: f64, theta: &[f64], out: &mut [f64]) {
        let g = lorenz_grad_x(State3::from_slice(x), Theta::from_slice(theta));
        for (i, row) in g.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(row);
        }
    }

    fn grad_theta(&self, x: &[f64], _t: f64, theta: &[f64], out: &mut [f64]) {
        let g = lorenz_grad_theta(State3::from_slice(x), Theta::from_slice(theta));
        for (i, row) in g.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(row);
        }
    }

    fn param_names(&self) -> Vec<String> {
        vec!["beta".into(), "rho".into(), "sigma".into()]
    }

    fn component_names(&self) -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }
}

/// Values of a `dim`-dimensional system on a sorted time grid, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(times.len() * dim, values.len(), "trajectory shape mismatch");
        Trajectory { times, dim, values }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.values[i * self.dim + c]).collect()
    }

    pub fn last(&self) -> Option<&[f64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }
}

/// Tolerances and bounds for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl IntegratorOptions {
    /// Tolerances used for ground-truth trajectories.
    pub const GROUND_TRUTH: IntegratorOptions = IntegratorOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_step: f64::INFINITY,
        max_steps: 50_000_000,
    };

    /// Cheaper tolerances for warm-start extrapolation.
    pub const WARM_START: IntegratorOptions = IntegratorOptions {
        abs_tol: 1e-8,
        rel_tol: 1e-8,
        max_step: f64::INFINITY,
        max_steps: 5_000_000,
    };

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self::GROUND_TRUTH
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Differences between the 5th- and 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a, S: OdeSystem + ?Sized> {
    sys: &'a S,
    theta: &'a [f64],
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
}

impl<'a, S: OdeSystem + ?Sized> Stepper<'a, S> {
    fn new(sys: &'a S, theta: &'a [f64]) -> Self {
        let d = sys.dim();
        Stepper {
            sys,
            theta,
            k: std::array::from_fn(|_| vec![0.0; d]),
            tmp: vec![0.0; d],
            y_new: vec![0.0; d],
        }
    }

    fn stage(&mut self, y: &[f64], t: f64, h: f64, coeffs: &[f64], out: usize) {
        for i in 0..y.len() {
            let mut acc = 0.0;
            for (j, c) in coeffs.iter().enumerate() {
                acc += c * self.k[j][i];
            }
            self.tmp[i] = y[i] + h * acc;
        }
        self.sys.rhs(&self.tmp, t, self.theta, &mut self.k[out]);
    }

    /// One trial step; `k[0]` must hold `f(t, y)`. Returns the scaled error norm.
    fn try_step(&mut self, y: &[f64], t: f64, h: f64, opts: &IntegratorOptions) -> f64 {
        self.stage(y, t + C2 * h, h, &[A21], 1);
        self.stage(y, t + C3 * h, h, &[A31, A32], 2);
        self.stage(y, t + C4 * h, h, &[A41, A42, A43], 3);
        self.stage(y, t + C5 * h, h, &[A51, A52, A53, A54], 4);
        self.stage(y, t + h, h, &[A61, A62, A63, A64, A65], 5);
        for i in 0..y.len() {
            self.y_new[i] = y[i]
                + h * (B1 * self.k[0][i]
                    + B3 * self.k[2][i]
                    + B4 * self.k[3][i]
                    + B5 * self.k[4][i]
                    + B6 * self.k[5][i]);
        }
        self.sys.rhs(&self.y_new, t + h, self.theta, &mut self.k[6]);
        let mut sum = 0.0;
        for i in 0..y.len() {
            let err = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(self.y_new[i].abs());
            sum += (err / scale).powi(2);
        }
        let norm = (sum / y.len() as f64).sqrt();
        if self.y_new.iter().all(|v| v.is_finite()) {
            norm
        } else {
            f64::INFINITY
        }
    }
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    theta: &[f64],
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    opts: &IntegratorOptions,
) -> f64 {
    let d = y0.len();
    let scale: Vec<f64> = y0.iter().map(|y| opts.abs_tol + opts.rel_tol * y.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter().zip(&scale).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / d as f64).sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; d];
    sys.rhs(&y1, t0 + h0, theta, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| (a - b) / h0).collect();
    let d2 = rms(&diff);
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.max_step)
}

/// Integrate from `x0` at `t_grid[0]`, reporting the state at every grid time.
///
/// Dormand–Prince 5(4) with per-step error control; steps are clipped to land on
/// grid times exactly, so output is deterministic for fixed inputs.
pub fn integrate<S: OdeSystem + ?Sized>(
    sys: &S,
    x0: &[f64],
    theta: &[f64],
    t_grid: &[f64],
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let d = sys.dim();
    if x0.len() != d {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} entries, system dimension is {d}",
            x0.len()
        )));
    }
    if t_grid.is_empty() {
        return Err(Error::InvalidGrid("empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("time grid must be strictly increasing".into()));
    }
    if !(opts.abs_tol > 0.0 && opts.rel_tol > 0.0) {
        return Err(Error::InvalidArgument("tolerances must be positive".into()));
    }

    let mut values = Vec::with_capacity(t_grid.len() * d);
    values.extend_from_slice(x0);
    let mut y = x0.to_vec();
    let mut t = t_grid[0];
    let mut stepper = Stepper::new(sys, theta);
    sys.rhs(&y, t, theta, &mut stepper.k[0]);
    let mut h = initial_step(sys, theta, t, &y, &stepper.k[0].clone(), opts);
    let mut n_steps = 0usize;

    for &target in &t_grid[1..] {
        while t < target {
            let remaining = target - t;
            if remaining <= 1e-13 * target.abs().max(1.0) {
                // round-off residue from accumulating step sizes
                t = target;
                sys.rhs(&y, t, theta, &mut stepper.k[0]);
                break;
            }
            // avoid leaving a sliver that would need a round-off-sized step
            let last = h >= remaining || remaining - h < 1e-6 * remaining;
            let h_try = if last { remaining } else { h };
            if h_try < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t, h: h_try });
            }
            n_steps += 1;
            if n_steps > opts.max_steps {
                return Err(Error::StepSizeUnderflow { t, h: h_try });
            }
            let err = stepper.try_step(&y, t, h_try, opts);
            if err <= 1.0 {
                t = if last { target } else { t + h_try };
                y.copy_from_slice(&stepper.y_new);
                let (k0, rest) = stepper.k.split_at_mut(1);
                std::mem::swap(&mut k0[0], &mut rest[5]);
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // a clipped final step says nothing about the natural step size
                if !last || factor < 1.0 {
                    h = (h_try * factor).min(opts.max_step);
                }
            } else {
                let factor = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
                } else {
                    0.2
                };
                h = h_try * factor;
            }
        }
        values.extend_from_slice(&y);
    }
    Ok(Trajectory::new(t_grid.to_vec(), d, values))
}
