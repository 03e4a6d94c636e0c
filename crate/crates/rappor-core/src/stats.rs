//! Scalar distribution functions used by the decoders.
//!
//! Everything is built on the regularized incomplete gamma function so the
//! chi-square and normal routines share one hardened kernel. Tail
//! probabilities are computed directly (not as `1 - cdf`) to keep relative
//! precision for the very small p-values the independence test produces.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 8] = [
    676.5203681218851,
    -1259.1392167224028,
    771.323428777653131,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
];

/// Natural log of the gamma function, Lanczos approximation (g = 7, n = 9).
pub fn ln_gamma(z: f64) -> f64 {
    if z < 0.5 {
        // Reflection keeps the approximation in its accurate half-plane.
        let pi = std::f64::consts::PI;
        (pi / (pi * z).sin()).ln() - ln_gamma(1.0 - z)
    } else {
        let z = z - 1.0;
        let mut x = 0.99999999999980993;
        for (i, c) in LANCZOS.iter().enumerate() {
            x += c / (z + i as f64 + 1.0);
        }
        let t = z + LANCZOS_G + 0.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
    }
}

const MAX_ITER: usize = 800;
const EPS: f64 = 1e-16;

/// Series expansion for the lower regularized incomplete gamma, valid and
/// fast for x < a + 1.
fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut sum = 1.0 / a;
    let mut del = sum;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Continued fraction (modified Lentz) for the upper regularized incomplete
/// gamma, valid for x >= a + 1.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lower regularized incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_p domain: a > 0, x >= 0");
    if x == 0.0 {
        0.0
    } else if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Upper regularized incomplete gamma Q(a, x) = 1 - P(a, x), computed
/// directly in the tail.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "gamma_q domain: a > 0, x >= 0");
    if x == 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Chi-square CDF with `df` degrees of freedom.
pub fn chi_square_cdf(x: f64, df: usize) -> Result<f64> {
    check_chi_args(x, df)?;
    Ok(gamma_p(df as f64 / 2.0, x / 2.0))
}

/// Chi-square survival function, precise for large statistics.
pub fn chi_square_sf(x: f64, df: usize) -> Result<f64> {
    check_chi_args(x, df)?;
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

fn check_chi_args(x: f64, df: usize) -> Result<()> {
    if df == 0 {
        return Err(Error::Input("chi-square needs df >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::Input(format!("chi-square statistic {x} is negative")));
    }
    Ok(())
}

/// Chi-square quantile by bisection on the CDF.
pub fn chi_square_quantile(prob: f64, df: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&prob) {
        return Err(Error::Input(format!("quantile level {prob} outside [0, 1)")));
    }
    if prob == 0.0 {
        return Ok(0.0);
    }
    let mut hi = df as f64;
    while chi_square_cdf(hi, df)? < prob {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical("chi-square quantile out of range".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi_square_cdf(mid, df)? < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal CDF, via the incomplete gamma kernel.
pub fn normal_cdf(x: f64) -> f64 {
    let half = gamma_p(0.5, x * x / 2.0) / 2.0;
    if x >= 0.0 {
        0.5 + half
    } else {
        // Tail computed directly from Q for relative precision.
        gamma_q(0.5, x * x / 2.0) / 2.0
    }
}

/// Standard normal quantile by bisection on the CDF.
pub fn normal_quantile(prob: f64) -> Result<f64> {
    if !(0.0 < prob && prob < 1.0) {
        return Err(Error::Input(format!("quantile level {prob} outside (0, 1)")));
    }
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
