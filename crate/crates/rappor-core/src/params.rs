use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise parameters for one randomized-response channel.
///
/// A value is hashed into `k` bits by `h` hash functions. The permanent
/// response flips each bit to 1 or 0 with probability `f/2` each; the
/// instantaneous response then reports a 1 with probability `q` where the
/// memoized bit is set and `p` where it is not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RapporParams {
    pub k: usize,
    pub h: usize,
    pub f: f64,
    pub p: f64,
    pub q: f64,
}

impl RapporParams {
    pub fn new(k: usize, h: usize, f: f64, p: f64, q: f64) -> Result<Self> {
        let params = RapporParams { k, h, f, p, q };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("bit count k must be positive".into()));
        }
        if self.h == 0 || self.h > self.k {
            return Err(Error::Config(format!(
                "hash count h = {} must be in 1..=k = {}",
                self.h, self.k
            )));
        }
        for (name, v) in [("f", self.f), ("p", self.p), ("q", self.q)] {
            if !(0.0..=1.0).contains(&v) || v.is_nan() {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if self.p > self.q {
            return Err(Error::Config(format!(
                "p = {} must not exceed q = {}",
                self.p, self.q
            )));
        }
        Ok(())
    }

    /// Effective probability that a reported bit is 1 given the true Bloom
    /// bit is 1, with the permanent noise folded in.
    pub fn q_star(&self) -> f64 {
        (1.0 - self.f / 2.0) * self.q + self.f / 2.0 * self.p
    }

    /// Effective probability that a reported bit is 1 given the true Bloom
    /// bit is 0.
    pub fn p_star(&self) -> f64 {
        (1.0 - self.f / 2.0) * self.p + self.f / 2.0 * self.q
    }

    /// True when the channel carries no signal and estimation from it is
    /// impossible.
    pub fn is_degenerate(&self) -> bool {
        self.p == self.q || self.f == 1.0
    }

    /// Differential-privacy level of a single report on this channel,
    /// `2h * ln(q*(1-p*) / (p*(1-q*)))`.
    ///
    /// Degenerate channels report 0; noiseless channels report infinity.
    pub fn epsilon(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        let qs = self.q_star();
        let ps = self.p_star();
        if ps <= 0.0 || qs >= 1.0 {
            return f64::INFINITY;
        }
        2.0 * self.h as f64 * (qs * (1.0 - ps) / (ps * (1.0 - qs))).ln()
    }
}

/// Bit count and hash count of a channel, fixed before a privacy budget is
/// allocated to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelShape {
    pub k: usize,
    pub h: usize,
}

/// Per-channel parameters produced by [`split_budget`].
#[derive(Clone, Debug, PartialEq)]
pub struct BudgetSplit {
    pub full: RapporParams,
    pub gram: RapporParams,
    pub per_channel_epsilon: f64,
}

/// Divides a total privacy budget evenly over one full-string report and `r`
/// n-gram reports, solving for the `q` that prices each channel at
/// `epsilon_total / (r + 1)` given fixed `p` and `f`.
///
/// With `r = 0` the full channel receives the entire budget.
pub fn split_budget(
    epsilon_total: f64,
    r: usize,
    full: ChannelShape,
    gram: ChannelShape,
    p: f64,
    f: f64,
) -> Result<BudgetSplit> {
    if !(epsilon_total > 0.0) || !epsilon_total.is_finite() {
        return Err(Error::Config(format!(
            "total budget {epsilon_total} must be positive and finite"
        )));
    }
    let per_channel = epsilon_total / (r + 1) as f64;
    let full_params = solve_q(per_channel, full, p, f)?;
    let gram_params = solve_q(per_channel, gram, p, f)?;
    Ok(BudgetSplit {
        full: full_params,
        gram: gram_params,
        per_channel_epsilon: per_channel,
    })
}

/// Inverts the epsilon formula for `q` at a fixed per-report budget.
fn solve_q(eps: f64, shape: ChannelShape, p: f64, f: f64) -> Result<RapporParams> {
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&f) {
        return Err(Error::Config(format!("p = {p}, f = {f} must lie in [0, 1]")));
    }
    if f >= 1.0 {
        return Err(Error::Config("f = 1 leaves no signal to budget".into()));
    }
    if p >= 1.0 {
        return Err(Error::Config("p = 1 admits no q above it".into()));
    }
    let big_a = (eps / (2.0 * shape.h as f64)).exp();

    // q* and p* are both linear in q: q* = a + b q, p* = e + g q.
    let a = f * p / 2.0;
    let b = 1.0 - f / 2.0;
    let e = (1.0 - f / 2.0) * p;
    let g = f / 2.0;

    // Solve q*(1 - p*) = A p*(1 - q*), a quadratic in q.
    let c2 = b * g * (big_a - 1.0);
    let c1 = b * (1.0 - e) - a * g - big_a * g * (1.0 - a) + big_a * e * b;
    let c0 = a * (1.0 - e) - big_a * e * (1.0 - a);
    let q = if c2.abs() < 1e-300 {
        -c0 / c1
    } else {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc < 0.0 {
            return Err(Error::Numerical(
                "budget inversion has no real solution".into(),
            ));
        }
        let root1 = (-c1 + disc.sqrt()) / (2.0 * c2);
        let root2 = (-c1 - disc.sqrt()) / (2.0 * c2);
        let lo = p - 1e-12;
        let hi = 1.0 + 1e-12;
        if (lo..=hi).contains(&root1) {
            root1
        } else if (lo..=hi).contains(&root2) {
            root2
        } else {
            return Err(Error::Config(format!(
                "per-channel budget {eps:.4} is infeasible at p = {p}, f = {f}"
            )));
        }
    };
    if !(p..=1.0).contains(&q) {
        return Err(Error::Config(format!(
            "per-channel budget {eps:.4} needs q = {q:.4}, outside ({p}, 1]"
        )));
    }
    let params = RapporParams::new(shape.k, shape.h, f, p, q)?;
    let achieved = params.epsilon();
    if (achieved - eps).abs() > 1e-9 * eps.max(1.0) {
        return Err(Error::Numerical(format!(
            "budget inversion reached {achieved:.6}, wanted {eps:.6}"
        )));
    }
    Ok(params)
}
