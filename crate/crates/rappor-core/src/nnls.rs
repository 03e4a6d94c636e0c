//! Nonnegative least squares for sparse binary design matrices.
//!
//! Classic Lawson-Hanson active-set iteration. Columns are given as lists of
//! set-row indices (a Bloom pattern has at most h of them), so Gram-matrix
//! entries are shared-bit counts and stay cheap to rebuild.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `min ||A w - y||^2` subject to `w >= 0`.
///
/// `cols[j]` lists the rows where column j is 1; `rows` is the height of A.
pub fn nnls_sparse(cols: &[Vec<u32>], rows: usize, y: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(rows, y.len(), "design height must match target length");
    let m = cols.len();
    let mut w = vec![0.0f64; m];
    let mut residual = y.to_vec();
    let mut in_set = vec![false; m];
    let mut passive: Vec<usize> = Vec::new();

    let tol = 1e-10 * (1.0 + y.iter().fold(0.0f64, |a, &v| a.max(v.abs())));
    let max_outer = 5 * m.min(rows) + 20;

    for _ in 0..max_outer {
        // Most negative-gradient column among those still clamped at zero.
        let mut best = None;
        let mut best_grad = tol;
        for (j, col) in cols.iter().enumerate() {
            if in_set[j] {
                continue;
            }
            let g: f64 = col.iter().map(|&s| residual[s as usize]).sum();
            if g > best_grad {
                best_grad = g;
                best = Some(j);
            }
        }
        let Some(enter) = best else {
            return Ok(w);
        };
        in_set[enter] = true;
        passive.push(enter);

        // Re-solve on the passive set, backing entries off toward zero until
        // the unconstrained solution is feasible.
        loop {
            let z = solve_restricted(cols, &passive, y)?;
            if z.iter().all(|&v| v > 0.0) {
                for (idx, &j) in passive.iter().enumerate() {
                    w[j] = z[idx];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (idx, &j) in passive.iter().enumerate() {
                if z[idx] <= 0.0 {
                    let a = w[j] / (w[j] - z[idx]);
                    if a < alpha {
                        alpha = a;
                    }
                }
            }
            for (idx, &j) in passive.iter().enumerate() {
                w[j] += alpha * (z[idx] - w[j]);
            }
            passive.retain(|&j| {
                if w[j] <= 1e-14 {
                    w[j] = 0.0;
                    in_set[j] = false;
                    false
                } else {
                    true
                }
            });
            if passive.is_empty() {
                break;
            }
        }

        residual.copy_from_slice(y);
        for &j in &passive {
            for &s in &cols[j] {
                residual[s as usize] -= w[j];
            }
        }
    }
    Err(Error::Numerical(
        "nonnegative least squares failed to converge".into(),
    ))
}

/// Unconstrained least squares restricted to `passive` columns, via normal
/// equations. A vanishing pivot (duplicate Bloom patterns) gets a hair of
/// ridge so ties split instead of aborting the fit.
fn solve_restricted(cols: &[Vec<u32>], passive: &[usize], y: &[f64]) -> Result<Vec<f64>> {
    let p = passive.len();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (a, &ja) in passive.iter().enumerate() {
        rhs[a] = cols[ja].iter().map(|&s| y[s as usize]).sum();
        for (b, &jb) in passive.iter().enumerate().skip(a) {
            let shared = cols[ja]
                .iter()
                .filter(|s| cols[jb].contains(s))
                .count() as f64;
            gram[(a, b)] = shared;
            gram[(b, a)] = shared;
        }
    }
    let solved = Cholesky::new(gram.clone()).map(|ch| ch.solve(&rhs)).or_else(|| {
        let ridge = 1e-10 * gram.trace().max(1.0) / p as f64;
        for i in 0..p {
            gram[(i, i)] += ridge;
        }
        Cholesky::new(gram).map(|ch| ch.solve(&rhs))
    });
    match solved {
        Some(z) => Ok(z.iter().copied().collect()),
        None => Err(Error::Numerical(
            "normal equations are singular even after ridge".into(),
        )),
    }
}
