//! Matérn covariance with analytic time-derivative blocks.
//!
//! With `z = sqrt(2 nu) |d| / phi2` and `c = 2^(1-nu) / Gamma(nu)`:
//!
//! ```text
//! k(d)      = phi1 c z^nu K_nu(z)
//! k'(d)     = -phi1 c s z^nu K_{nu-1}(z) sign(d)                     s = sqrt(2 nu) / phi2
//! k''(d)    =  phi1 c s^2 (z^nu K_{nu-2}(z) - z^(nu-1) K_{nu-1}(z))
//! ```
//!
//! For `k(s, t)` with `d = s - t`: `dk/ds = k'(d)`, `dk/dt = -k'(d)` and
//! `d2k/dsdt = -k''(d)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::bessel::{bessel_k_ladder_scaled, bessel_k_scaled};
use crate::error::{Error, Result};

/// Smoothness used throughout.
pub const MATERN_NU: f64 = 2.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyper {
    pub phi1: f64,
    pub phi2: f64,
}

impl KernelHyper {
    pub fn new(phi1: f64, phi2: f64) -> Result<Self> {
        let h = KernelHyper { phi1, phi2 };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi1 > 0.0 && self.phi1.is_finite() && self.phi2 > 0.0 && self.phi2.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "kernel hyperparameters must be positive and finite, got phi1={} phi2={}",
                self.phi1, self.phi2
            )))
        }
    }
}

/// Value and first/second lag derivatives of `k(d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagDerivs {
    pub k: f64,
    pub dk: f64,
    pub d2k: f64,
}

impl LagDerivs {
    /// `dk/ds` for `k(s, t)`, `d = s - t`.
    pub fn ds(&self) -> f64 {
        self.dk
    }

    /// `dk/dt`.
    pub fn dt(&self) -> f64 {
        -self.dk
    }

    /// `d2k/dsdt`.
    pub fn dsdt(&self) -> f64 {
        -self.d2k
    }
}

/// Matérn kernel with a fixed smoothness `nu > 1`.
#[derive(Debug, Clone, Copy)]
pub struct Matern {
    nu: f64,
    ln_c: f64,
    sqrt_2nu: f64,
}

impl Default for Matern {
    fn default() -> Self {
        Matern::new(MATERN_NU)
    }
}

impl Matern {
    pub fn new(nu: f64) -> Self {
        assert!(nu > 1.0, "twice-differentiable Matern kernel needs nu > 1");
        Matern {
            nu,
            ln_c: (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu),
            sqrt_2nu: (2.0 * nu).sqrt(),
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `exp(z) K_{nu-2}, exp(z) K_{nu-1}, exp(z) K_nu` at `z > 0`.
    fn bessel_triplet(&self, z: f64) -> [f64; 3] {
        let n = self.nu.round();
        let mu = self.nu - n;
        if n >= 2.0 {
            let ladder = bessel_k_ladder_scaled(mu, z, n as usize);
            let i = n as usize;
            [ladder[i - 2], ladder[i - 1], ladder[i]]
        } else {
            [
                bessel_k_scaled(self.nu - 2.0, z),
                bessel_k_scaled(self.nu - 1.0, z),
                bessel_k_scaled(self.nu, z),
            ]
        }
    }

    pub fn k(&self, d: f64, h: &KernelHyper) -> f64 {
        self.derivs(d, h).k
    }

    pub fn derivs(&self, d: f64, h: &KernelHyper) -> LagDerivs {
        let s = self.sqrt_2nu / h.phi2;
        let z = s * d.abs();
        if z == 0.0 {
            return LagDerivs {
                k: h.phi1,
                dk: 0.0,
                d2k: -h.phi1 * self.nu / ((self.nu - 1.0) * h.phi2 * h.phi2),
            };
        }
        let [km2, km1, k0] = self.bessel_triplet(z);
        let lz = z.ln();
        // c z^nu e^{-z}, the common factor of every term.
        let pre = (self.ln_c + self.nu * lz - z).exp();
        let k = h.phi1 * pre * k0;
        let dk = -h.phi1 * pre * s * km1 * d.signum();
        let d2k = h.phi1 * pre * s * s * (km2 - km1 / z);
        LagDerivs { k, dk, d2k }
    }
}

/// Kernel values and derivatives for every pair of `times`, evaluated once per
/// distinct lag when the times are uniformly spaced.
pub struct PairDerivs {
    n: usize,
    uniform: bool,
    table: Vec<LagDerivs>,
}

impl PairDerivs {
    pub fn new(kern: &Matern, times: &[f64], h: &KernelHyper) -> Self {
        let n = times.len();
        let dt = if n > 1 { (times[n - 1] - times[0]) / (n - 1) as f64 } else { 0.0 };
        let uniform = n > 2
            && times
                .windows(2)
                .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-12 * dt.abs().max(1e-300));
        let table = if uniform {
            (0..n).map(|k| kern.derivs(k as f64 * dt, h)).collect()
        } else {
            let mut t = Vec::with_capacity(n * n);
            for &a in times {
                for &b in times {
                    t.push(kern.derivs(a - b, h));
                }
            }
            t
        };
        PairDerivs { n, uniform, table }
    }

    /// Derivatives at `d = t_i - t_j`.
    pub fn get(&self, i: usize, j: usize) -> LagDerivs {
        if self.uniform {
            let l = self.table[i.abs_diff(j)];
            if i >= j {
                l
            } else {
                LagDerivs { dk: -l.dk, ..l }
            }
        } else {
            self.table[i * self.n + j]
        }
    }
}

/// `k(d)` for the default smoothness.
pub fn matern_k(d: f64, h: &KernelHyper) -> f64 {
    Matern::default().k(d, h)
}

/// `(dk/ds, dk/dt, d2k/dsdt)` at `d = s - t` for the default smoothness.
pub fn matern_derivatives(d: f64, h: &KernelHyper) -> (f64, f64, f64) {
    let l = Matern::default().derivs(d, h);
    (l.ds(), l.dt(), l.dsdt())
}
