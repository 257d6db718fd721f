//! Inference grids: observation times refined by inserting evenly spaced points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedGrid {
    pub tau_obs: Vec<f64>,
    pub tau_inf: Vec<f64>,
    pub level: u32,
    /// `tau_inf[obs_index[j]] == tau_obs[j]`.
    pub obs_index: Vec<usize>,
}

impl DiscretizedGrid {
    pub fn len(&self) -> usize {
        self.tau_inf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_inf.is_empty()
    }

    /// Appends times (later than every current time) to both `tau_obs` and `tau_inf`
    /// without refinement.
    pub fn with_appended(&self, extra: &[f64]) -> Result<DiscretizedGrid> {
        let last = self.tau_inf.last().copied().unwrap_or(f64::NEG_INFINITY);
        let mut prev = last;
        for &t in extra {
            if !(t > prev) {
                return Err(Error::InvalidGrid(
                    "appended times must be increasing and after the grid".into(),
                ));
            }
            prev = t;
        }
        let mut g = self.clone();
        for &t in extra {
            g.obs_index.push(g.tau_inf.len());
            g.tau_inf.push(t);
            g.tau_obs.push(t);
        }
        Ok(g)
    }

    /// Keeps only grid points with `t <= t_end` (tolerant to round-off).
    pub fn truncated(&self, t_end: f64) -> DiscretizedGrid {
        let tol = 1e-9 * t_end.abs().max(1.0);
        let n_inf = self.tau_inf.iter().take_while(|&&t| t <= t_end + tol).count();
        let n_obs = self.tau_obs.iter().take_while(|&&t| t <= t_end + tol).count();
        DiscretizedGrid {
            tau_obs: self.tau_obs[..n_obs].to_vec(),
            tau_inf: self.tau_inf[..n_inf].to_vec(),
            level: self.level,
            obs_index: self.obs_index[..n_obs].to_vec(),
        }
    }
}

/// Inserts `2^k - 1` evenly spaced points into every gap of an evenly spaced `tau_obs`.
pub fn discretize(tau_obs: &[f64], k: u32) -> Result<DiscretizedGrid> {
    let n = tau_obs.len();
    if n < 2 {
        return Err(Error::InvalidGrid("need at least 2 observation times".into()));
    }
    if k > 16 {
        return Err(Error::InvalidArgument(format!("discretization level {k} is too large")));
    }
    let dt = (tau_obs[n - 1] - tau_obs[0]) / (n - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::InvalidGrid("observation times must be increasing".into()));
    }
    for (j, w) in tau_obs.windows(2).enumerate() {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt {
            return Err(Error::InvalidGrid(format!(
                "observation times are unevenly spaced at index {}",
                j + 1
            )));
        }
    }
    let per = 1usize << k;
    let mut tau_inf = Vec::with_capacity((n - 1) * per + 1);
    let mut obs_index = Vec::with_capacity(n);
    for j in 0..n - 1 {
        obs_index.push(tau_inf.len());
        tau_inf.push(tau_obs[j]);
        let step = (tau_obs[j + 1] - tau_obs[j]) / per as f64;
        for s in 1..per {
            tau_inf.push(tau_obs[j] + s as f64 * step);
        }
    }
    obs_index.push(tau_inf.len());
    tau_inf.push(tau_obs[n - 1]);
    Ok(DiscretizedGrid {
        tau_obs: tau_obs.to_vec(),
        tau_inf,
        level: k,
        obs_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(discretize(&[0.0, 0.1, 0.2], 1).unwrap().len(), 5);
        let obs: Vec<f64> = (0..20).map(|j| j as f64 / 10.0).collect();
        assert_eq!(discretize(&obs, 2).unwrap().len(), 77);
        let g0 = discretize(&obs, 0).unwrap();
        assert_eq!(g0.tau_inf, obs);
    }

    #[test]
    fn obs_are_embedded() {
        let obs: Vec<f64> = (0..7).map(|j| 0.5 + j as f64 * 0.25).collect();
        for k in 0..4 {
            let g = discretize(&obs, k).unwrap();
            for (j, &i) in g.obs_index.iter().enumerate() {
                assert_eq!(g.tau_inf[i], obs[j]);
            }
            assert!(g.tau_inf.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn refinement_is_nested() {
        let obs: Vec<f64> = (0..6).map(|j| j as f64 * 0.2).collect();
        let coarse = discretize(&obs, 1).unwrap();
        let fine = discretize(&obs, 2).unwrap();
        for t in &coarse.tau_inf {
            assert!(fine.tau_inf.iter().any(|u| (u - t).abs() < 1e-12));
        }
    }

    #[test]
    fn uneven_spacing_rejected() {
        assert!(discretize(&[0.0, 0.1, 0.3], 1).is_err());
    }

    #[test]
    fn append_and_truncate() {
        let g = discretize(&[0.0, 0.5, 1.0], 1).unwrap();
        let h = g.with_appended(&[1.1, 1.2]).unwrap();
        assert_eq!(h.len(), 7);
        assert_eq!(h.obs_index, vec![0, 2, 4, 5, 6]);
        assert_eq!(h.truncated(1.0), g);
        assert!(g.with_appended(&[0.9]).is_err());
    }
}
