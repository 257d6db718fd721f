//! Covariance blocks of a GP and its time derivative on a fixed grid.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::kernel::{KernelHyper, Matern, PairDerivs};
use crate::error::{Error, Result};

/// Relative jitter ladder, multiplied by the largest diagonal entry.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// A symmetric positive definite matrix factored with the smallest working jitter.
#[derive(Debug, Clone)]
pub struct Factored {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute jitter added to the diagonal.
    pub jitter: f64,
    /// Jitter relative to the largest diagonal entry (one of [`JITTER_LADDER`]).
    pub relative_jitter: f64,
    pub logdet: f64,
}

/// Cholesky factorization of `a + lambda I`, trying each rung of [`JITTER_LADDER`].
pub fn factor_with_jitter(a: &DMatrix<f64>) -> Result<Factored> {
    let scale = a.diagonal().iter().copied().fold(0.0, f64::max);
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        let mut m = a.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            if logdet.is_finite() {
                return Ok(Factored {
                    chol,
                    jitter,
                    relative_jitter: rel,
                    logdet,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Per-component GP quantities on a grid.
///
/// `c_inv`, `m` and `k_inv` enter the MAGI posterior; `c_factor`/`k_factor` keep
/// the factorizations and jitters for reproducibility.
#[derive(Debug, Clone)]
pub struct KernelBundle {
    pub grid: Vec<f64>,
    pub hyper: KernelHyper,
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
    /// `'C C^{-1}`: maps GP values to the conditional mean of the derivative.
    pub m: DMatrix<f64>,
    /// `C'' - 'C C^{-1} C'`: conditional covariance of the derivative.
    pub k: DMatrix<f64>,
    pub k_inv: DMatrix<f64>,
    pub c_jitter: f64,
    pub k_jitter: f64,
    pub k_relative_jitter: f64,
    pub logdet_c: f64,
    pub logdet_k: f64,
}

impl KernelBundle {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Larger of the two recorded absolute jitters.
    pub fn jitter_used(&self) -> f64 {
        self.c_jitter.max(self.k_jitter)
    }
}

/// Assembles and factors the covariance blocks for one component.
pub fn build_bundle(grid: &[f64], hyper: KernelHyper) -> Result<KernelBundle> {
    hyper.validate()?;
    let n = grid.len();
    if n < 2 {
        return Err(Error::InvalidGrid("bundle needs at least 2 grid points".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
    }

    let pairs = PairDerivs::new(&Matern::default(), grid, &hyper);
    let mut c = DMatrix::zeros(n, n);
    // dc[(j, k)] = dk/ds at (t_j, t_k); C' = dc^T.
    let mut dc = DMatrix::zeros(n, n);
    let mut ddc = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..=j {
            let l = pairs.get(j, k);
            c[(j, k)] = l.k;
            c[(k, j)] = l.k;
            dc[(j, k)] = l.ds();
            dc[(k, j)] = -l.ds();
            ddc[(j, k)] = l.dsdt();
            ddc[(k, j)] = l.dsdt();
        }
    }

    let cf = factor_with_jitter(&c)?;
    let mut c_inv = cf.chol.inverse();
    symmetrize(&mut c_inv);

    // A = L^{-1} C'  so that  'C C^{-1} C' = A^T A  and  'C C^{-1} = A^T L^{-1}.
    let cprime = dc.transpose();
    let a = cf
        .chol
        .l_dirty()
        .lower_triangle()
        .solve_lower_triangular(&cprime)
        .ok_or_else(|| Error::NotPositiveDefinite { max_jitter: cf.jitter })?;
    let mut k = &ddc - a.transpose() * &a;
    symmetrize(&mut k);
    let m = &dc * &c_inv;

    let kf = factor_with_jitter(&k)?;
    let mut k_inv = kf.chol.inverse();
    symmetrize(&mut k_inv);

    Ok(KernelBundle {
        grid: grid.to_vec(),
        hyper,
        c,
        c_inv,
        m,
        k,
        k_inv,
        c_jitter: cf.jitter,
        k_jitter: kf.jitter,
        k_relative_jitter: kf.relative_jitter,
        logdet_c: cf.logdet,
        logdet_k: kf.logdet,
    })
}
