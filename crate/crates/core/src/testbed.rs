//! Lorenz test-bed regimes and seeded noisy/sparse observation sets.
//!
//! Datasets for one `(regime, seed)` are derived from a single block of standard
//! normal draws on the densest grid (40 points per unit time over `[0, 10)`).
//! Every `(T_max, d_obs, alpha)` variant subsamples and truncates that block, so
//! variants share noise wherever their grids coincide.
//!
//! Noise stream: ChaCha20 seeded with `seed_from_u64(seed)`, stream id set to the
//! regime's [`RegimeName::stream_id`], drawn row-major (`t`, then component) with
//! the ziggurat standard normal from `rand_distr`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{integrate, IntegratorOptions, Lorenz, State3, Theta, Trajectory};

/// Densest supported observation grid, points per unit time.
pub const BASE_DENSITY: u32 = 40;
/// Resolution used to measure each component's range on `[0, truth_horizon]`.
pub const RANGE_DENSITY: u32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeName {
    StableCanonical,
    StableTransientChaos,
    ChaoticButterfly,
    ChaoticNoButterfly,
}

impl RegimeName {
    pub const ALL: [RegimeName; 4] = [
        RegimeName::StableCanonical,
        RegimeName::StableTransientChaos,
        RegimeName::ChaoticButterfly,
        RegimeName::ChaoticNoButterfly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeName::StableCanonical => "stable-canonical",
            RegimeName::StableTransientChaos => "stable-transient-chaos",
            RegimeName::ChaoticButterfly => "chaotic-butterfly",
            RegimeName::ChaoticNoButterfly => "chaotic-no-butterfly",
        }
    }

    pub fn stream_id(self) -> u64 {
        match self {
            RegimeName::StableCanonical => 0,
            RegimeName::StableTransientChaos => 1,
            RegimeName::ChaoticButterfly => 2,
            RegimeName::ChaoticNoButterfly => 3,
        }
    }

    pub fn is_stable(self) -> bool {
        matches!(
            self,
            RegimeName::StableCanonical | RegimeName::StableTransientChaos
        )
    }

    fn default_config(self) -> &'static str {
        match self {
            RegimeName::StableCanonical => include_str!("../regimes/stable-canonical.toml"),
            RegimeName::StableTransientChaos => {
                include_str!("../regimes/stable-transient-chaos.toml")
            }
            RegimeName::ChaoticButterfly => include_str!("../regimes/chaotic-butterfly.toml"),
            RegimeName::ChaoticNoButterfly => {
                include_str!("../regimes/chaotic-no-butterfly.toml")
            }
        }
    }
}

impl fmt::Display for RegimeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeName::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regime '{s}'")))
    }
}

/// A named Lorenz configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub name: RegimeName,
    pub label: String,
    pub theta: Theta,
    pub x0: State3,
    pub truth_horizon: f64,
}

#[derive(Deserialize)]
struct RegimeFile {
    name: RegimeName,
    label: String,
    beta: f64,
    rho: f64,
    sigma: f64,
    x0: [f64; 3],
    #[serde(default = "default_horizon")]
    truth_horizon: f64,
}

fn default_horizon() -> f64 {
    10.0
}

impl RegimeSpec {
    /// The shipped configuration for `name`.
    pub fn builtin(name: RegimeName) -> Self {
        Self::from_toml_str(name.default_config()).expect("shipped regime config is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: RegimeFile = toml::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("regime config: {e}")))?;
        let spec = RegimeSpec {
            name: f.name,
            label: f.label,
            theta: Theta::new(f.beta, f.rho, f.sigma),
            x0: State3::new(f.x0[0], f.x0[1], f.x0[2]),
            truth_horizon: f.truth_horizon,
        };
        if !(spec.truth_horizon > 0.0) {
            return Err(Error::InvalidArgument("truth_horizon must be positive".into()));
        }
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    /// Ground truth at arbitrary sorted times, starting from `x0` at `t = 0`.
    pub fn truth_at(&self, times: &[f64]) -> Result<Trajectory> {
        let starts_at_zero = times.first() == Some(&0.0);
        let mut grid = Vec::with_capacity(times.len() + 1);
        if !starts_at_zero {
            grid.push(0.0);
        }
        grid.extend_from_slice(times);
        let mut tr = integrate(
            &Lorenz,
            &self.x0.to_array(),
            &self.theta.to_array(),
            &grid,
            &IntegratorOptions::GROUND_TRUTH,
        )?;
        if !starts_at_zero {
            tr.times.remove(0);
            tr.values.drain(0..3);
        }
        Ok(tr)
    }

    /// Ground truth on `[0, truth_horizon]` at `density` points per unit time (endpoints included).
    pub fn truth_dense(&self, density: u32) -> Result<Trajectory> {
        let n = (self.truth_horizon * density as f64).round() as usize;
        let times: Vec<f64> = (0..=n).map(|j| j as f64 / density as f64).collect();
        self.truth_at(&times)
    }
}

/// Provenance of a generated observation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMeta {
    pub regime: String,
    pub t_max: f64,
    pub d_obs: f64,
    pub alpha: f64,
    pub seed: u64,
}

/// Observation times and values; `NaN` marks a missing entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// Row-major, `times.len() * names.len()` entries.
    pub values: Vec<f64>,
    pub meta: Option<ObservationMeta>,
}

impl ObservationSet {
    pub fn new(times: Vec<f64>, names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if times.len() * names.len() != values.len() {
            return Err(Error::InvalidArgument(format!(
                "{} times x {} components does not match {} values",
                times.len(),
                names.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(
                "observation times must be strictly increasing".into(),
            ));
        }
        Ok(ObservationSet {
            times,
            names,
            values,
            meta: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn get(&self, row: usize, comp: usize) -> Option<f64> {
        let v = self.values[row * self.dim() + comp];
        (!v.is_nan()).then_some(v)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    /// Observed `(time, value)` pairs of one component.
    pub fn observed(&self, comp: usize) -> (Vec<f64>, Vec<f64>) {
        (0..self.len())
            .filter_map(|i| self.get(i, comp).map(|v| (self.times[i], v)))
            .unzip()
    }

    /// Rows with `t <= t_end` (with a small tolerance for grid round-off).
    pub fn restrict_to(&self, t_end: f64) -> ObservationSet {
        self.restrict_window(f64::NEG_INFINITY, t_end)
    }

    pub fn restrict_window(&self, t_start: f64, t_end: f64) -> ObservationSet {
        let tol = 1e-9 * t_end.abs().max(1.0);
        let d = self.dim();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, &t) in self.times.iter().enumerate() {
            if t >= t_start - tol && t <= t_end + tol {
                times.push(t);
                values.extend_from_slice(&self.values[i * d..(i + 1) * d]);
            }
        }
        ObservationSet {
            times,
            names: self.names.clone(),
            values,
            meta: self.meta.clone(),
        }
    }

    /// Appends fully-missing rows at `extra_times` (all later than the current last time).
    pub fn with_missing_rows(&self, extra_times: &[f64]) -> Result<ObservationSet> {
        let mut times = self.times.clone();
        times.extend_from_slice(extra_times);
        let mut values = self.values.clone();
        values.extend(std::iter::repeat(f64::NAN).take(extra_times.len() * self.dim()));
        let mut out = ObservationSet::new(times, self.names.clone(), values)?;
        out.meta = self.meta.clone();
        Ok(out)
    }
}

/// Per-component noise sd: `alpha * (max - min)` over the supplied truth.
pub fn component_noise_sd(truth: &Trajectory, alpha: f64) -> Vec<f64> {
    (0..truth.dim)
        .map(|c| {
            let col = truth.component(c);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            alpha * (max - min)
        })
        .collect()
}

/// Validates `(T_max, d_obs)` and returns `(n_rows, subsample_stride)`.
pub fn observation_grid_shape(t_max: f64, d_obs: f64, horizon: f64) -> Result<(usize, usize)> {
    if !(d_obs > 0.0) || d_obs.fract() != 0.0 || BASE_DENSITY % (d_obs as u32) != 0 {
        return Err(Error::UnsupportedDensity(d_obs));
    }
    if !(t_max > 0.0 && t_max <= horizon + 1e-12) {
        return Err(Error::InvalidGrid(format!(
            "T_max={t_max} outside (0, {horizon}]"
        )));
    }
    let n = d_obs * t_max;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidGrid(format!(
            "d_obs * T_max = {n} is not an integer"
        )));
    }
    Ok((n.round() as usize, (BASE_DENSITY / d_obs as u32) as usize))
}

/// Standard normal block for one `(regime, seed)` on the base grid.
fn base_noise(regime: RegimeName, seed: u64, rows: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(regime.stream_id());
    (0..rows * 3).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Noisy observations on `t_j = j / d_obs`, `j = 0..d_obs*T_max`.
pub fn make_dataset(
    regime: &RegimeSpec,
    t_max: f64,
    d_obs: f64,
    alpha: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha={alpha} must be >= 0")));
    }
    let (n_rows, stride) = observation_grid_shape(t_max, d_obs, regime.truth_horizon)?;

    let dense = regime.truth_dense(RANGE_DENSITY)?;
    let sd = component_noise_sd(&dense, alpha);

    let base_rows = (regime.truth_horizon * BASE_DENSITY as f64).round() as usize;
    let noise = base_noise(regime.name, seed, base_rows);
    let every = (RANGE_DENSITY / BASE_DENSITY) as usize;

    let mut times = Vec::with_capacity(n_rows);
    let mut values = Vec::with_capacity(n_rows * 3);
    for j in 0..n_rows {
        let base = j * stride;
        let truth = dense.row(base * every);
        times.push(j as f64 / d_obs);
        for c in 0..3 {
            values.push(truth[c] + sd[c] * noise[base * 3 + c]);
        }
    }
    let mut set = ObservationSet::new(times, vec!["x".into(), "y".into(), "z".into()], values)?;
    set.meta = Some(ObservationMeta {
        regime: regime.name.to_string(),
        t_max,
        d_obs,
        alpha,
        seed,
    });
    Ok(set)
}

fn format_meta(meta: &ObservationMeta) -> String {
    format!(
        "# regime={} Tmax={} dobs={} alpha={} seed={}",
        meta.regime, meta.t_max, meta.d_obs, meta.alpha, meta.seed
    )
}

fn parse_meta(line: &str, path: &Path) -> Result<ObservationMeta> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        column: 1,
        message,
    };
    let mut regime = None;
    let mut t_max = None;
    let mut d_obs = None;
    let mut alpha = None;
    let mut seed = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(format!("malformed header token '{tok}'")))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| parse_err(format!("bad number '{v}' for {k}")))
        };
        match k {
            "regime" => regime = Some(v.to_string()),
            "Tmax" => t_max = Some(num(v)?),
            "dobs" => d_obs = Some(num(v)?),
            "alpha" => alpha = Some(num(v)?),
            "seed" => {
                seed = Some(
                    v.parse::<u64>()
                        .map_err(|_| parse_err(format!("bad seed '{v}'")))?,
                )
            }
            _ => return Err(parse_err(format!("unknown header key '{k}'"))),
        }
    }
    match (regime, t_max, d_obs, alpha, seed) {
        (Some(regime), Some(t_max), Some(d_obs), Some(alpha), Some(seed)) => Ok(ObservationMeta {
            regime,
            t_max,
            d_obs,
            alpha,
            seed,
        }),
        _ => Err(parse_err("header is missing one of regime/Tmax/dobs/alpha/seed".into())),
    }
}

/// Serializes to the CSV layout: optional `# regime=...` header, `t,<names>` and
/// one row per time; missing entries are empty fields.
pub fn to_csv_string(set: &ObservationSet) -> String {
    let mut out = String::new();
    if let Some(meta) = &set.meta {
        out.push_str(&format_meta(meta));
        out.push('\n');
    }
    out.push('t');
    for n in &set.names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, t) in set.times.iter().enumerate() {
        out.push_str(&t.to_string());
        for v in set.row(i) {
            out.push(',');
            if !v.is_nan() {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_csv(set: &ObservationSet, path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(set)).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str, path: &Path) -> Result<ObservationSet> {
    let mut lines = text.lines().enumerate().peekable();
    let mut meta = None;
    if let Some((_, first)) = lines.peek() {
        if first.starts_with('#') {
            meta = Some(parse_meta(first, path)?);
            lines.next();
        }
    }
    let (hline, header) = lines.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        column: 1,
        message: "missing column header".into(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: hline + 1,
            column: 1,
            message: "header must be 't,<component>,...'".into(),
        });
    }
    let names: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
    let d = names.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut row_no = 0usize;
    for (lno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        row_no += 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lno + 1,
                column: 1,
                message: format!("expected {} fields, found {}", d + 1, fields.len()),
            });
        }
        for (col, f) in fields.iter().enumerate() {
            let f = f.trim();
            if f.is_empty() {
                if col == 0 {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: lno + 1,
                        column: 1,
                        message: "time field may not be missing".into(),
                    });
                }
                values.push(f64::NAN);
                continue;
            }
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: lno + 1,
                column: col + 1,
                message: format!("row {row_no}: malformed number '{f}'"),
            })?;
            if col == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let mut set = ObservationSet::new(times, names, values).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        column: 0,
        message: e.to_string(),
    })?;
    set.meta = meta;
    Ok(set)
}

pub fn read_csv(path: &Path) -> Result<ObservationSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canonical() -> RegimeSpec {
        RegimeSpec::builtin(RegimeName::StableCanonical)
    }

    #[test]
    fn builtin_regimes_have_fixed_parameters() {
        for r in RegimeName::ALL {
            let spec = RegimeSpec::builtin(r);
            assert_eq!(spec.name, r);
            assert_eq!(spec.theta.beta, 8.0 / 3.0);
            assert_eq!(spec.theta.sigma, 10.0);
            let rho = match r {
                RegimeName::StableCanonical => 6.0,
                RegimeName::StableTransientChaos => 23.0,
                _ => 28.0,
            };
            assert_eq!(spec.theta.rho, rho);
        }
        let a = RegimeSpec::builtin(RegimeName::ChaoticButterfly);
        let b = RegimeSpec::builtin(RegimeName::ChaoticNoButterfly);
        assert_eq!(a.theta, b.theta);
        assert_ne!(a.x0, b.x0);
    }

    #[test]
    fn noise_sd_formula() {
        let tr = Trajectory::new(vec![0.0, 1.0, 2.0], 3, vec![
            0.0, 5.0, 1.0, //
            40.0, 5.0, 2.0, //
            10.0, 5.0, 3.0,
        ]);
        assert_eq!(component_noise_sd(&tr, 0.15), vec![6.0, 0.0, 0.15 * 2.0]);
        assert_eq!(component_noise_sd(&tr, 0.0), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn dataset_sizes() {
        let r = canonical();
        assert_eq!(make_dataset(&r, 6.0, 10.0, 0.15, 1).unwrap().len(), 60);
        assert_eq!(make_dataset(&r, 10.0, 10.0, 0.15, 1).unwrap().len(), 100);
        assert!(matches!(
            make_dataset(&r, 2.0, 7.0, 0.1, 1),
            Err(Error::UnsupportedDensity(_))
        ));
        assert!(matches!(
            make_dataset(&r, 0.3, 5.0, 0.1, 1),
            Err(Error::InvalidGrid(_))
        ));
    }

    #[test]
    fn zero_noise_equals_truth() {
        let r = canonical();
        let set = make_dataset(&r, 2.0, 20.0, 0.0, 9).unwrap();
        let truth = r.truth_at(&set.times).unwrap();
        for (a, b) in set.values.iter().zip(&truth.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_and_subsampling_share_noise() {
        let r = RegimeSpec::builtin(RegimeName::ChaoticButterfly);
        let long = make_dataset(&r, 10.0, 40.0, 0.01, 4).unwrap();
        let short = make_dataset(&r, 2.0, 40.0, 0.01, 4).unwrap();
        assert_eq!(short.values[..], long.values[..short.values.len()]);
        let sparse = make_dataset(&r, 10.0, 10.0, 0.01, 4).unwrap();
        for j in 0..sparse.len() {
            assert_eq!(sparse.row(j), long.row(4 * j));
            assert_eq!(sparse.times[j], long.times[4 * j]);
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let r = canonical();
        let a = make_dataset(&r, 4.0, 10.0, 0.15, 3).unwrap();
        let b = make_dataset(&r, 4.0, 10.0, 0.15, 3).unwrap();
        let c = make_dataset(&r, 4.0, 10.0, 0.15, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn csv_round_trip_with_missing() {
        let r = canonical();
        let mut set = make_dataset(&r, 1.0, 10.0, 0.15, 0).unwrap();
        set.values[3 * 4 + 2] = f64::NAN;
        let text = to_csv_string(&set);
        assert!(text.starts_with("# regime=stable-canonical Tmax=1 dobs=10 alpha=0.15 seed=0\nt,x,y,z\n"));
        let back = parse_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(back.times, set.times);
        assert_eq!(back.meta, set.meta);
        assert!(back.get(4, 2).is_none());
        for (a, b) in back.values.iter().zip(&set.values) {
            assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }

    #[test]
    fn malformed_cell_names_row() {
        let text = "t,x,y,z\n0,1,2,3\n0.1,1,abc,3\n";
        match parse_csv(text, Path::new("bad.csv")) {
            Err(Error::Parse { line, column, message, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, 3);
                assert!(message.contains("row 2"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn regime_shapes_match_descriptions() {
        let count_sign_changes = |v: &[f64]| v.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        let nb = RegimeSpec::builtin(RegimeName::ChaoticNoButterfly).truth_dense(100).unwrap();
        assert_eq!(count_sign_changes(&nb.component(0)), 0);
        let bf = RegimeSpec::builtin(RegimeName::ChaoticButterfly).truth_dense(100).unwrap();
        assert!(count_sign_changes(&bf.component(0)) >= 3);
        let tc = RegimeSpec::builtin(RegimeName::StableTransientChaos).truth_dense(100).unwrap();
        assert!(count_sign_changes(&tc.component(0)) >= 3);
        let sc = RegimeSpec::builtin(RegimeName::StableCanonical).truth_dense(100).unwrap();
        let last = sc.last().unwrap();
        let c = (40.0f64 / 3.0).sqrt();
        assert!((last[0] - c).abs() < 0.05 && (last[2] - 5.0).abs() < 0.05, "{last:?}");
    }
}
