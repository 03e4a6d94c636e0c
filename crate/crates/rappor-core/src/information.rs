//! Uncertainty quantification for EM joint estimates.
//!
//! The observed information matrix is the negated Hessian of the
//! observed-data log-likelihood at the fitted table. Its (ridged) inverse
//! estimates the covariance of the table entries, which in turn feeds a
//! chi-square test of independence between the two variables.
//!
//! Cells are flattened row-major: cell (i, j) of an m x n table maps to
//! index i*n + j.

use crate::error::{Error, Result};
use crate::joint::{JointConfig, JointEstimate, LikelihoodCache};
use crate::stats::chi_square_sf;
use nalgebra::DMatrix;

/// Cells below this value are floored before evaluating the information
/// matrix, keeping likelihood-ratio denominators away from zero.
const CELL_FLOOR: f64 = 1e-12;

/// Observed information of the fitted joint table.
///
/// Entry ((i,j),(s,t)) is Σ_k L_k(i,j) L_k(s,t) / denom_k², with denom_k the
/// mixture likelihood of report k. Per-report scaling cancels between the
/// numerator and the squared denominator, so normalized cache rows are fine.
pub fn observed_information(
    lx: &LikelihoodCache,
    ly: &LikelihoodCache,
    p_hat: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (m, n) = (lx.n_cells(), ly.n_cells());
    if lx.n_reports() != ly.n_reports() {
        return Err(Error::Input("cache sizes disagree".into()));
    }
    if p_hat.nrows() != m || p_hat.ncols() != n {
        return Err(Error::Input(format!(
            "table is {}x{} but caches imply {m}x{n}",
            p_hat.nrows(),
            p_hat.ncols()
        )));
    }
    let p_work = p_hat.map(|v| v.max(CELL_FLOOR));
    let cells = m * n;
    let mut info = DMatrix::zeros(cells, cells);
    let mut w = vec![0.0f64; cells];
    for k in 0..lx.n_reports() {
        let u = lx.row(k);
        let v = ly.row(k);
        let mut denom = 0.0;
        for i in 0..m {
            for j in 0..n {
                let lik = u[i] * v[j];
                w[i * n + j] = lik;
                denom += p_work[(i, j)] * lik;
            }
        }
        if denom <= 0.0 || !denom.is_finite() {
            continue;
        }
        let inv2 = 1.0 / (denom * denom);
        for a in 0..cells {
            if w[a] == 0.0 {
                continue;
            }
            let wa = w[a] * inv2;
            for b in a..cells {
                info[(a, b)] += wa * w[b];
            }
        }
    }
    for a in 0..cells {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    Ok(info)
}

/// Inverse of `info + ridge * I`.
pub fn covariance(info: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if info.nrows() != info.ncols() {
        return Err(Error::Input("information matrix must be square".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Input(format!("ridge must be >= 0, got {ridge}")));
    }
    let size = info.nrows();
    let mut ridged = info.clone();
    for i in 0..size {
        ridged[(i, i)] += ridge;
    }
    match ridged.clone().cholesky() {
        Some(chol) => Ok(chol.inverse()),
        None => {
            let eigen = ridged.symmetric_eigen();
            let max = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            Err(Error::Numerical(format!(
                "information matrix not invertible after ridge {ridge:.3e} \
                 (condition number {:.3e})",
                max / min.abs().max(f64::MIN_POSITIVE)
            )))
        }
    }
}

/// Default ridge for an information matrix: 1e-9 of the mean diagonal entry.
pub fn default_ridge(info: &DMatrix<f64>) -> f64 {
    1e-9 * info.trace() / info.nrows().max(1) as f64
}

/// Computes and stores the covariance of a fitted table. The caches must be
/// the ones the fit consumed.
pub fn estimate_covariance(
    est: &mut JointEstimate,
    lx: &LikelihoodCache,
    ly: &LikelihoodCache,
    cfg: &JointConfig,
) -> Result<()> {
    let info = observed_information(lx, ly, &est.p_hat)?;
    let ridge = cfg.ridge.unwrap_or_else(|| default_ridge(&info));
    est.sigma = Some(covariance(&info, ridge)?);
    Ok(())
}

/// Outcome of the chi-square independence test.
#[derive(Clone, Debug)]
pub struct IndependenceResult {
    /// Quadratic-form statistic (p̂ − μ̂)ᵀ Σ̂⁻¹ (p̂ − μ̂).
    pub statistic: f64,
    /// Degrees of freedom, (rows − 1)(cols − 1) over the full tested table.
    pub df: usize,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

/// Tests whether the fitted table factorizes into its marginals.
pub fn independence_test(est: &JointEstimate, alpha: f64) -> Result<IndependenceResult> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Input(format!("alpha {alpha} outside (0, 1)")));
    }
    let sigma = est
        .sigma
        .as_ref()
        .ok_or_else(|| Error::Input("estimate has no covariance; compute it first".into()))?;
    let (m, n) = (est.p_hat.nrows(), est.p_hat.ncols());
    let cells = m * n;
    if sigma.nrows() != cells || sigma.ncols() != cells {
        return Err(Error::Input(format!(
            "covariance is {}x{} but the table has {cells} cells",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let rows = est.row_marginals();
    let cols = est.col_marginals();
    let mut d = nalgebra::DVector::zeros(cells);
    for i in 0..m {
        for j in 0..n {
            d[i * n + j] = est.p_hat[(i, j)] - rows[i] * cols[j];
        }
    }
    let z = match sigma.clone().cholesky() {
        Some(chol) => chol.solve(&d),
        None => sigma
            .clone()
            .lu()
            .solve(&d)
            .ok_or_else(|| Error::Numerical("covariance matrix is singular".into()))?,
    };
    let statistic = d.dot(&z).max(0.0);
    let df = m.saturating_sub(1) * n.saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        chi_square_sf(statistic, df)?
    };
    Ok(IndependenceResult {
        statistic,
        df,
        p_value,
        reject: p_value < alpha,
        alpha,
    })
}
