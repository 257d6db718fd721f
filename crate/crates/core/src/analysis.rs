//! Error metrics, posterior summaries and the stability probability estimator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::magi::PosteriorSamples;
use crate::ode::Trajectory;

/// Schema tag carried by every serialized [`MetricReport`].
pub const METRIC_REPORT_SCHEMA: &str = "magidyn.metric_report/1";

/// Truth values with smaller magnitude are skipped by [`smae`].
pub const SMAE_ZERO_THRESHOLD: f64 = 1e-9;

/// Mean over draws of `|draw - truth| / |truth|`, per parameter.
///
/// `draws` is row-major with `truth.len()` columns.
pub fn scaled_l1(draws: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    let p = truth.len();
    if p == 0 || draws.is_empty() || draws.len() % p != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} draw values do not form rows of {p} parameters",
            draws.len()
        )));
    }
    if let Some(k) = truth.iter().position(|&t| t == 0.0 || !t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "true value of parameter {k} must be finite and nonzero"
        )));
    }
    let n = draws.len() / p;
    let mut acc = vec![0.0; p];
    for row in draws.chunks_exact(p) {
        for k in 0..p {
            acc[k] += (row[k] - truth[k]).abs() / truth[k].abs();
        }
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

/// Mean absolute percent error; the same quantity as [`scaled_l1`], as a fraction.
pub fn mape(draws: &[f64], truth: &[f64]) -> Result<Vec<f64>> {
    scaled_l1(draws, truth)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Smae {
    pub per_component: Vec<f64>,
    /// Grid points skipped per component because the truth is near zero.
    pub excluded: Vec<usize>,
}

/// Scaled mean absolute error per component over a shared grid.
///
/// Rows where `|truth| < SMAE_ZERO_THRESHOLD` are excluded and counted. A component
/// with every row excluded reports `NaN`.
pub fn smae(pred: &Trajectory, truth: &Trajectory) -> Result<Smae> {
    if pred.dim != truth.dim || pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory shapes differ: {}x{} vs {}x{}",
            pred.len(),
            pred.dim,
            truth.len(),
            truth.dim
        )));
    }
    for (a, b) in pred.times.iter().zip(&truth.times) {
        if (a - b).abs() > 1e-9 * a.abs().max(1.0) {
            return Err(Error::InvalidGrid(format!(
                "prediction time {a} does not match truth time {b}"
            )));
        }
    }
    let d = pred.dim;
    let mut sum = vec![0.0; d];
    let mut used = vec![0usize; d];
    let mut excluded = vec![0usize; d];
    for i in 0..pred.len() {
        let (p, t) = (pred.row(i), truth.row(i));
        for c in 0..d {
            if t[c].abs() < SMAE_ZERO_THRESHOLD {
                excluded[c] += 1;
            } else {
                sum[c] += (p[c] - t[c]).abs() / t[c].abs();
                used[c] += 1;
            }
        }
    }
    let per_component = sum
        .iter()
        .zip(&used)
        .map(|(&s, &u)| if u == 0 { f64::NAN } else { s / u as f64 })
        .collect();
    Ok(Smae {
        per_component,
        excluded,
    })
}

/// Whether one Lorenz draw `(beta, rho, sigma)` satisfies the stability condition.
///
/// `rho < s(s + beta + 3)/(s - beta - 1)` with `s` the draw's sigma or the override.
/// When `s - beta - 1 <= 0` the condition cannot hold and the draw counts as stable
/// only if `rho < 1`.
pub fn is_stable_draw(beta: f64, rho: f64, sigma: f64, sigma_override: Option<f64>) -> bool {
    let s = sigma_override.unwrap_or(sigma);
    let denom = s - beta - 1.0;
    if denom > 0.0 {
        rho < s * (s + beta + 3.0) / denom
    } else {
        rho < 1.0
    }
}

/// Fraction of Lorenz draws (row-major `(beta, rho, sigma)`) judged stable.
pub fn stability_probability(theta_draws: &[f64], sigma_override: Option<f64>) -> Result<f64> {
    if theta_draws.is_empty() || theta_draws.len() % 3 != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} values do not form (beta, rho, sigma) draws",
            theta_draws.len()
        )));
    }
    let n = theta_draws.len() / 3;
    let stable = theta_draws
        .chunks_exact(3)
        .filter(|r| is_stable_draw(r[0], r[1], r[2], sigma_override))
        .count();
    Ok(stable as f64 / n as f64)
}

/// Mean, sd and central 95% band of one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Linear-interpolation quantile of sorted data (the `(n-1)p` convention).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of a nonempty sample; sd uses the `n - 1` denominator (0 for one value).
pub fn summarize_values(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "cannot summarize an empty sample");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Summary {
        mean,
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub times: Vec<f64>,
    pub component_names: Vec<String>,
    pub param_names: Vec<String>,
    /// `trajectory[c][t]` summarizes component `c` at `times[t]`.
    pub trajectory: Vec<Vec<Summary>>,
    pub theta: Vec<Summary>,
    pub sigma: Vec<Summary>,
}

impl PosteriorSummary {
    /// Posterior-mean trajectory.
    pub fn mean_trajectory(&self) -> Trajectory {
        let d = self.trajectory.len();
        let mut values = Vec::with_capacity(self.times.len() * d);
        for t in 0..self.times.len() {
            for c in 0..d {
                values.push(self.trajectory[c][t].mean);
            }
        }
        Trajectory::new(self.times.clone(), d, values)
    }

    /// Columns `t`, then `<c>_mean,<c>_q025,<c>_q975` per component.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.component_names {
            let _ = write!(out, ",{c}_mean,{c}_q025,{c}_q975");
        }
        out.push('\n');
        for (t, time) in self.times.iter().enumerate() {
            let _ = write!(out, "{time}");
            for comp in &self.trajectory {
                let s = comp[t];
                let _ = write!(out, ",{},{},{}", s.mean, s.q025, s.q975);
            }
            out.push('\n');
        }
        out
    }
}

/// Per-grid-point and per-parameter summaries of the kept draws.
pub fn summarize(samples: &PosteriorSamples) -> Result<PosteriorSummary> {
    let kept = samples.n_kept();
    if kept == 0 {
        return Err(Error::InvalidArgument("no kept draws to summarize".into()));
    }
    let n = samples.n_grid();
    let d = samples.dim();
    let p = samples.n_params();
    let mut buf = vec![0.0; kept];
    let mut trajectory = Vec::with_capacity(d);
    for c in 0..d {
        let mut comp = Vec::with_capacity(n);
        for t in 0..n {
            for (k, v) in buf.iter_mut().enumerate() {
                *v = samples.x_draw(k)[c * n + t];
            }
            comp.push(summarize_values(&buf));
        }
        trajectory.push(comp);
    }
    let column = |rows: &dyn Fn(usize) -> f64| summarize_values(&(0..kept).map(rows).collect::<Vec<_>>());
    let theta = (0..p)
        .map(|j| column(&|k| samples.theta_draw(k)[j]))
        .collect();
    let sigma = (0..d)
        .map(|c| column(&|k| samples.sigma_draw(k)[c]))
        .collect();
    Ok(PosteriorSummary {
        times: samples.grid.tau_inf.clone(),
        component_names: samples.component_names.clone(),
        param_names: samples.param_names.clone(),
        trajectory,
        theta,
        sigma,
    })
}

/// Metrics of one run against known truth. Maps are keyed by parameter or
/// component name so the JSON layout is stable; sections not computed stay empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: String,
    pub theta_scaled_l1: BTreeMap<String, f64>,
    pub theta_mape: BTreeMap<String, f64>,
    pub smae: BTreeMap<String, f64>,
    pub smae_excluded: BTreeMap<String, usize>,
    pub stability_probability: Option<f64>,
    pub n_draws: usize,
    pub n_grid: usize,
}

impl Default for MetricReport {
    fn default() -> Self {
        MetricReport {
            schema: METRIC_REPORT_SCHEMA.into(),
            theta_scaled_l1: BTreeMap::new(),
            theta_mape: BTreeMap::new(),
            smae: BTreeMap::new(),
            smae_excluded: BTreeMap::new(),
            stability_probability: None,
            n_draws: 0,
            n_grid: 0,
        }
    }
}

impl MetricReport {
    /// Adds parameter errors of row-major `draws` against `truth`. The stability
    /// probability is filled in for three-parameter (Lorenz) draws.
    pub fn add_theta(
        &mut self,
        param_names: &[String],
        draws: &[f64],
        truth: &[f64],
        sigma_override: Option<f64>,
    ) -> Result<()> {
        if param_names.len() != truth.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter names for {} true values",
                param_names.len(),
                truth.len()
            )));
        }
        let l1 = scaled_l1(draws, truth)?;
        let named: BTreeMap<String, f64> = param_names.iter().cloned().zip(l1).collect();
        self.theta_mape = named.clone();
        self.theta_scaled_l1 = named;
        self.n_draws = draws.len() / truth.len();
        self.stability_probability = if truth.len() == 3 {
            Some(stability_probability(draws, sigma_override)?)
        } else {
            None
        };
        Ok(())
    }

    /// Adds per-component sMAE of `pred` against `truth`.
    pub fn add_smae(
        &mut self,
        component_names: &[String],
        pred: &Trajectory,
        truth: &Trajectory,
    ) -> Result<()> {
        if component_names.len() != pred.dim {
            return Err(Error::InvalidArgument(format!(
                "{} component names for a {}-dimensional trajectory",
                component_names.len(),
                pred.dim
            )));
        }
        let s = smae(pred, truth)?;
        self.smae = component_names.iter().cloned().zip(s.per_component).collect();
        self.smae_excluded = component_names.iter().cloned().zip(s.excluded).collect();
        self.n_grid = pred.len();
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(times: &[f64], rows: &[[f64; 3]]) -> Trajectory {
        Trajectory::new(
            times.to_vec(),
            3,
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
        )
    }

    #[test]
    fn scaled_l1_examples() {
        assert_eq!(scaled_l1(&[6.0, 6.0], &[6.0]).unwrap(), vec![0.0]);
        assert!((scaled_l1(&[6.3], &[6.0]).unwrap()[0] - 0.05).abs() < 1e-12);
        assert!((scaled_l1(&[5.0, 7.0], &[6.0]).unwrap()[0] - 1.0 / 6.0).abs() < 1e-12);
        assert!(scaled_l1(&[1.0], &[0.0]).is_err());
        assert!(scaled_l1(&[1.0, 2.0, 3.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn smae_examples() {
        let t = [0.0, 0.1, 0.2];
        let truth = traj(&t, &[[1.0, -2.0, 3.0], [2.0, 4.0, -1.0], [0.5, 1.0, 1.0]]);
        let same = smae(&truth, &truth).unwrap();
        assert_eq!(same.per_component, vec![0.0; 3]);

        let scaled = Trajectory::new(t.to_vec(), 3, truth.values.iter().map(|v| v * 1.1).collect());
        for v in smae(&scaled, &truth).unwrap().per_component {
            assert!((v - 0.1).abs() < 1e-12);
        }

        let twos = traj(&t, &[[2.0; 3]; 3]);
        let shifted = traj(&t, &[[2.3; 3]; 3]);
        for v in smae(&shifted, &twos).unwrap().per_component {
            assert!((v - 0.15).abs() < 1e-12);
        }
    }

    #[test]
    fn smae_excludes_zero_truth() {
        let t = [0.0, 1.0];
        let truth = traj(&t, &[[0.0, 1.0, 1.0], [2.0, 1.0, 1.0]]);
        let pred = traj(&t, &[[5.0, 1.0, 1.0], [3.0, 1.0, 1.0]]);
        let s = smae(&pred, &truth).unwrap();
        assert_eq!(s.excluded, vec![1, 0, 0]);
        assert!((s.per_component[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn smae_rejects_mismatched_grids() {
        let a = traj(&[0.0, 1.0], &[[1.0; 3]; 2]);
        let b = traj(&[0.0, 1.5], &[[1.0; 3]; 2]);
        assert!(smae(&a, &b).is_err());
    }

    #[test]
    fn stability_examples() {
        let stable = [8.0 / 3.0, 6.0, 10.0].repeat(5);
        assert_eq!(stability_probability(&stable, None).unwrap(), 1.0);
        let chaotic = [8.0 / 3.0, 28.0, 10.0].repeat(5);
        assert_eq!(stability_probability(&chaotic, None).unwrap(), 0.0);
        let mut mixed = [8.0 / 3.0, 6.0, 10.0].repeat(3);
        mixed.extend([8.0 / 3.0, 28.0, 10.0]);
        assert_eq!(stability_probability(&mixed, None).unwrap(), 0.75);
    }

    #[test]
    fn stability_degenerate_denominator() {
        // sigma - beta - 1 <= 0: only the origin regime counts as stable.
        assert!(is_stable_draw(3.0, 0.5, 2.0, None));
        assert!(!is_stable_draw(3.0, 5.0, 2.0, None));
        assert!(!is_stable_draw(3.0, 5.0, 4.0, None));
        // The override replaces the drawn sigma.
        assert!(is_stable_draw(8.0 / 3.0, 6.0, 2.0, Some(10.0)));
    }

    #[test]
    fn summary_examples() {
        let s = summarize_values(&[4.0; 10]);
        assert_eq!((s.mean, s.sd, s.q975 - s.q025), (4.0, 0.0, 0.0));
        let seq: Vec<f64> = (0..1000).map(f64::from).collect();
        let s = summarize_values(&seq);
        assert_eq!(s.mean, 499.5);
        assert!((s.q025 - 24.975).abs() < 1e-9);
        assert!((s.q975 - 974.025).abs() < 1e-9);
    }

    #[test]
    fn band_coverage_on_gaussian_draws() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = summarize_values(&draws);
        let inside = draws.iter().filter(|&&v| v >= s.q025 && v <= s.q975).count();
        let cov = inside as f64 / draws.len() as f64;
        assert!((cov - 0.95).abs() < 0.01, "coverage {cov}");
        assert!((s.q025 + 1.96).abs() < 0.05 && (s.q975 - 1.96).abs() < 0.05);
    }

    #[test]
    fn report_json_has_schema() {
        let names: Vec<String> = ["beta", "rho", "sigma"].iter().map(|s| s.to_string()).collect();
        let mut r = MetricReport::default();
        r.add_theta(&names, &[8.0 / 3.0, 6.0, 10.0], &[8.0 / 3.0, 6.0, 10.0], None)
            .unwrap();
        let t = traj(&[0.0, 1.0], &[[1.0; 3]; 2]);
        r.add_smae(&names, &t, &t).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema"], METRIC_REPORT_SCHEMA);
        assert_eq!(v["stability_probability"], 1.0);
        assert_eq!(v["theta_scaled_l1"]["rho"], 0.0);
        assert_eq!(v["smae"]["sigma"], 0.0);
        assert_eq!(v["n_grid"], 2);
    }

    proptest! {
        #[test]
        fn scaled_l1_sign_and_scale_invariant(
            draws in prop::collection::vec(-50.0f64..50.0, 3..30),
            truth in prop::collection::vec(0.5f64..20.0, 3),
            c in prop::sample::select(vec![-3.0, -1.0, 0.25, 2.0, 7.5]),
        ) {
            let n = draws.len() / 3 * 3;
            let draws = &draws[..n];
            let base = scaled_l1(draws, &truth).unwrap();
            let sd: Vec<f64> = draws.iter().map(|v| c * v).collect();
            let st: Vec<f64> = truth.iter().map(|v| c * v).collect();
            let scaled = scaled_l1(&sd, &st).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn smae_scale_invariant(
            vals in prop::collection::vec(-10.0f64..10.0, 6..60),
            noise in prop::collection::vec(-1.0f64..1.0, 60),
            c in prop::sample::select(vec![-2.0, 0.5, 3.0]),
        ) {
            let n = vals.len() / 3;
            let times: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
            let truth = Trajectory::new(times.clone(), 3, vals[..3 * n].to_vec());
            let pred = Trajectory::new(
                times.clone(),
                3,
                truth.values.iter().zip(&noise).map(|(a, b)| a + b).collect(),
            );
            let s1 = smae(&pred, &truth).unwrap();
            let scale = |t: &Trajectory| Trajectory::new(times.clone(), 3, t.values.iter().map(|v| c * v).collect());
            let s2 = smae(&scale(&pred), &scale(&truth)).unwrap();
            prop_assert_eq!(&s1.excluded, &s2.excluded);
            for (a, b) in s1.per_component.iter().zip(&s2.per_component) {
                prop_assert!(a.is_nan() && b.is_nan() || (a - b).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }

        #[test]
        fn stability_with_override_ignores_sigma_draws(
            rows in prop::collection::vec((0.1f64..5.0, 0.0f64..40.0, 0.1f64..30.0), 1..20),
            other in 0.1f64..30.0,
        ) {
            let a: Vec<f64> = rows.iter().flat_map(|&(b, r, s)| [b, r, s]).collect();
            let b: Vec<f64> = rows.iter().flat_map(|&(b, r, _)| [b, r, other]).collect();
            let pa = stability_probability(&a, Some(10.0)).unwrap();
            let pb = stability_probability(&b, Some(10.0)).unwrap();
            prop_assert_eq!(pa, pb);
            prop_assert!((0.0..=1.0).contains(&pa));
        }
    }
}
