//! Joint distribution estimation over pairs of randomized reports.
//!
//! Given paired reports (X', Y') collected through two independent channels,
//! `em_fit` recovers the joint probability table over the two candidate sets
//! by expectation maximization. Reports are conditionally independent given
//! the true pair, so each report pair's likelihood factorizes into per-side
//! conditional probabilities which are cached up front.
//!
//! A residual "other" category can be appended to either side. Its per-bit
//! report profile is estimated from the counts left unexplained by the
//! detected candidates, at the noisy report level, so its report likelihood
//! is a plain Bernoulli product with no further channel correction.

use crate::bits::BitVector;
use crate::dict::CandidateDictionary;
use crate::error::{Error, Result};
use crate::marginal::MarginalEstimate;
use crate::params::RapporParams;
use nalgebra::DMatrix;

/// Residual mass below this floor cannot support an "other" category.
pub const RESIDUAL_MASS_FLOOR: f64 = 1e-6;

/// Profile probabilities are clamped this far away from 0 and 1 when used in
/// likelihoods.
const PROFILE_CLAMP: f64 = 1e-12;

/// EM solver settings.
#[derive(Clone, Debug)]
pub struct JointConfig {
    /// Convergence threshold on the max absolute cell change per iteration.
    pub delta_star: f64,
    /// Iteration cap; hitting it yields `converged = false`, not an error.
    pub max_iterations: usize,
    /// Ridge added to the information matrix before inversion. `None` scales
    /// one automatically from the matrix trace.
    pub ridge: Option<f64>,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            delta_star: 1e-6,
            max_iterations: 1000,
            ridge: None,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_star > 0.0) {
            return Err(Error::Config(format!(
                "delta_star must be positive, got {}",
                self.delta_star
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if let Some(r) = self.ridge {
            if !(r >= 0.0) {
                return Err(Error::Config(format!("ridge must be >= 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// Per-bit probability that a report bit is set given the true value falls in
/// the residual category. Estimated at the report level, noise included.
#[derive(Clone, Debug)]
pub struct OtherProfile {
    pub bit_probs: Vec<f64>,
}

/// One side of a joint analysis: candidate dictionary, channel parameters,
/// and optionally a residual category appended after the dictionary entries.
#[derive(Clone)]
pub struct JointSide<'a> {
    dict: &'a CandidateDictionary,
    params: &'a RapporParams,
    other: Option<&'a OtherProfile>,
}

impl<'a> JointSide<'a> {
    pub fn new(dict: &'a CandidateDictionary, params: &'a RapporParams) -> Self {
        JointSide {
            dict,
            params,
            other: None,
        }
    }

    /// Appends a residual category with the given report-bit profile.
    pub fn with_other(mut self, profile: &'a OtherProfile) -> Self {
        self.other = Some(profile);
        self
    }

    pub fn dict(&self) -> &CandidateDictionary {
        self.dict
    }

    pub fn params(&self) -> &RapporParams {
        self.params
    }

    pub fn has_other(&self) -> bool {
        self.other.is_some()
    }

    /// Dictionary size plus the residual category if present.
    pub fn n_cells(&self) -> usize {
        self.dict.len() + usize::from(self.other.is_some())
    }

    fn validate(&self) -> Result<()> {
        if self.dict.len() == 0 {
            return Err(Error::Input("candidate set is empty".into()));
        }
        if self.dict.k() != self.params.k {
            return Err(Error::Config(format!(
                "dictionary k = {} but params k = {}",
                self.dict.k(),
                self.params.k
            )));
        }
        if let Some(profile) = self.other {
            if profile.bit_probs.len() != self.params.k {
                return Err(Error::Config(format!(
                    "other profile has {} bits but params k = {}",
                    profile.bit_probs.len(),
                    self.params.k
                )));
            }
        }
        Ok(())
    }
}

/// Probability of observing report `x_prime` given the true value's Bloom
/// pattern `candidate_bits`, under instantaneous response with `params`.
pub fn conditional_report_prob(
    x_prime: &BitVector,
    candidate_bits: &BitVector,
    params: &RapporParams,
) -> f64 {
    ln_conditional_report_prob(x_prime, candidate_bits, params).exp()
}

/// Log-space version of [`conditional_report_prob`]; may be `-inf`.
pub fn ln_conditional_report_prob(
    x_prime: &BitVector,
    candidate_bits: &BitVector,
    params: &RapporParams,
) -> f64 {
    assert_eq!(x_prime.len(), candidate_bits.len());
    let q_star = params.q_star();
    let p_star = params.p_star();
    let k = x_prime.len();
    let set_on_cand = x_prime.and_count(candidate_bits);
    let cand_bits = candidate_bits.count_ones();
    let set_total = x_prime.count_ones();
    // Four cell counts of the (candidate bit, report bit) contingency.
    let n11 = set_on_cand;
    let n10 = cand_bits - set_on_cand;
    let n01 = set_total - set_on_cand;
    let n00 = k + set_on_cand - cand_bits - set_total;
    ln_term(n11, q_star)
        + ln_term(n10, 1.0 - q_star)
        + ln_term(n01, p_star)
        + ln_term(n00, 1.0 - p_star)
}

/// `count * ln(prob)` with the convention that a zero count contributes
/// nothing even when the log is -inf.
#[inline]
fn ln_term(count: usize, prob: f64) -> f64 {
    if count == 0 {
        0.0
    } else if prob <= 0.0 {
        f64::NEG_INFINITY
    } else {
        count as f64 * prob.ln()
    }
}

/// Probability of a report under the residual category's bit profile.
pub fn other_report_prob(x_prime: &BitVector, profile: &OtherProfile) -> f64 {
    ln_other_report_prob(x_prime, profile).exp()
}

fn ln_other_report_prob(x_prime: &BitVector, profile: &OtherProfile) -> f64 {
    assert_eq!(x_prime.len(), profile.bit_probs.len());
    let mut acc = 0.0;
    for (i, &raw) in profile.bit_probs.iter().enumerate() {
        let pi = raw.clamp(PROFILE_CLAMP, 1.0 - PROFILE_CLAMP);
        acc += if x_prime.get(i) {
            pi.ln()
        } else {
            (1.0 - pi).ln()
        };
    }
    acc
}

/// Estimates the residual category's report-bit profile from the counts the
/// detected candidates fail to explain.
pub fn other_profile(
    reports: &[BitVector],
    top: &MarginalEstimate,
    params: &RapporParams,
    dict: &CandidateDictionary,
) -> Result<OtherProfile> {
    let counts = crate::marginal::observed_bit_counts(reports)?;
    other_profile_from_counts(&counts, reports.len(), top, params, dict)
}

/// Same estimate from pre-aggregated bit counts.
pub fn other_profile_from_counts(
    counts: &[u64],
    n_reports: usize,
    top: &MarginalEstimate,
    params: &RapporParams,
    dict: &CandidateDictionary,
) -> Result<OtherProfile> {
    if n_reports == 0 {
        return Err(Error::Input("no reports".into()));
    }
    if counts.len() != params.k || dict.k() != params.k {
        return Err(Error::Config(
            "bit counts, dictionary and params disagree on k".into(),
        ));
    }
    if top.frequencies.len() != dict.len() {
        return Err(Error::Config(format!(
            "marginal covers {} candidates but dictionary has {}",
            top.frequencies.len(),
            dict.len()
        )));
    }
    let detected_mass: f64 = top.detected.iter().map(|&i| top.frequencies[i]).sum();
    let other_mass = (1.0 - detected_mass).clamp(0.0, 1.0);
    if other_mass <= RESIDUAL_MASS_FLOOR {
        return Err(Error::NegligibleResidualMass {
            mass: other_mass,
            floor: RESIDUAL_MASS_FLOOR,
        });
    }

    let n = n_reports as f64;
    let q_star = params.q_star();
    let p_star = params.p_star();
    let mut bit_probs = Vec::with_capacity(params.k);
    for s in 0..params.k {
        // Expected number of true Bloom filters with bit s set among the
        // detected candidates' share of the population. The baseline term
        // spans only that share; the remainder is what the residual profile
        // is trying to measure.
        let t_s: f64 = top
            .detected
            .iter()
            .filter(|&&i| dict.column(i).get(s))
            .map(|&i| top.frequencies[i])
            .sum::<f64>()
            * n;
        let modeled = q_star * t_s + p_star * (n * detected_mass - t_s);
        let p_o = (counts[s] as f64 - modeled) / (n * other_mass);
        bit_probs.push(p_o.clamp(0.0, 1.0));
    }
    Ok(OtherProfile { bit_probs })
}

/// Cached conditional likelihoods, one row per report, one column per cell
/// (dictionary entries in order, then the residual category if present).
///
/// Rows are stored normalized so the largest entry is 1; the subtracted log
/// scale is kept per row so absolute log-likelihoods can be reconstructed.
/// Memory is O(reports x cells), which is the scaling limit of the decoder.
pub struct LikelihoodCache {
    values: Vec<f64>,
    log_scale: Vec<f64>,
    n_reports: usize,
    n_cells: usize,
}

impl LikelihoodCache {
    pub fn build(reports: &[BitVector], side: &JointSide) -> Result<Self> {
        side.validate()?;
        let n_cells = side.n_cells();
        let mut values = Vec::with_capacity(reports.len() * n_cells);
        let mut log_scale = Vec::with_capacity(reports.len());
        let mut row = vec![0.0f64; n_cells];
        for (idx, report) in reports.iter().enumerate() {
            if report.len() != side.params.k {
                return Err(Error::Input(format!(
                    "report {idx} has {} bits, expected {}",
                    report.len(),
                    side.params.k
                )));
            }
            for (i, col) in side.dict.columns().iter().enumerate() {
                row[i] = ln_conditional_report_prob(report, col, side.params);
            }
            if let Some(profile) = side.other {
                row[n_cells - 1] = ln_other_report_prob(report, profile);
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                values.extend(std::iter::repeat_n(0.0, n_cells));
                log_scale.push(f64::NEG_INFINITY);
            } else {
                values.extend(row.iter().map(|&l| (l - max).exp()));
                log_scale.push(max);
            }
        }
        Ok(LikelihoodCache {
            values,
            log_scale,
            n_reports: reports.len(),
            n_cells,
        })
    }

    pub fn n_reports(&self) -> usize {
        self.n_reports
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Normalized likelihoods for report `k`, one entry per cell.
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_cells..(k + 1) * self.n_cells]
    }

    /// Log scale subtracted from row `k`.
    #[inline]
    pub fn scale(&self, k: usize) -> f64 {
        self.log_scale[k]
    }
}

/// Result of an EM fit. `p_hat` is the maximum-likelihood joint table, rows
/// indexing the X cells and columns the Y cells, residual category last.
#[derive(Clone, Debug)]
pub struct JointEstimate {
    pub p_hat: DMatrix<f64>,
    /// Covariance of the flattened table, filled in by
    /// [`estimate_covariance`](crate::information::estimate_covariance).
    pub sigma: Option<DMatrix<f64>>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Reports whose likelihood vanished under every cell; they contribute
    /// their prior instead and are excluded from the log-likelihood.
    pub zero_likelihood_reports: usize,
    pub n_reports: usize,
}

impl JointEstimate {
    /// Row sums of the table: the implied X marginal.
    pub fn row_marginals(&self) -> Vec<f64> {
        (0..self.p_hat.nrows())
            .map(|i| self.p_hat.row(i).sum())
            .collect()
    }

    /// Column sums of the table: the implied Y marginal.
    pub fn col_marginals(&self) -> Vec<f64> {
        (0..self.p_hat.ncols())
            .map(|j| self.p_hat.column(j).sum())
            .collect()
    }
}

/// Fits the joint table over paired reports by EM.
pub fn em_fit(
    pairs: &[(BitVector, BitVector)],
    x_side: &JointSide,
    y_side: &JointSide,
    cfg: &JointConfig,
) -> Result<JointEstimate> {
    let x_reports: Vec<BitVector> = pairs.iter().map(|(x, _)| x.clone()).collect();
    let y_reports: Vec<BitVector> = pairs.iter().map(|(_, y)| y.clone()).collect();
    let lx = LikelihoodCache::build(&x_reports, x_side)?;
    let ly = LikelihoodCache::build(&y_reports, y_side)?;
    em_fit_cached(&lx, &ly, cfg)
}

/// EM over prebuilt likelihood caches; the caches must cover the same
/// reports in the same order.
pub fn em_fit_cached(
    lx: &LikelihoodCache,
    ly: &LikelihoodCache,
    cfg: &JointConfig,
) -> Result<JointEstimate> {
    cfg.validate()?;
    if lx.n_reports != ly.n_reports {
        return Err(Error::Input(format!(
            "cache sizes disagree: {} vs {} reports",
            lx.n_reports, ly.n_reports
        )));
    }
    let n_reports = lx.n_reports;
    if n_reports == 0 {
        return Err(Error::Input("no report pairs to fit".into()));
    }
    let (m, n) = (lx.n_cells, ly.n_cells);
    let mut p = DMatrix::from_element(m, n, 1.0 / (m * n) as f64);
    let mut accum = DMatrix::zeros(m, n);
    let mut loglik_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut zero_rows = 0usize;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        accum.fill(0.0);
        let mut loglik = 0.0;
        zero_rows = 0;
        for k in 0..n_reports {
            let u = lx.row(k);
            let v = ly.row(k);
            let mut denom = 0.0;
            for i in 0..m {
                if u[i] == 0.0 {
                    continue;
                }
                let mut row_acc = 0.0;
                for j in 0..n {
                    row_acc += p[(i, j)] * v[j];
                }
                denom += u[i] * row_acc;
            }
            if denom > 0.0 && denom.is_finite() {
                let inv = 1.0 / denom;
                for i in 0..m {
                    if u[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        accum[(i, j)] += p[(i, j)] * u[i] * v[j] * inv;
                    }
                }
                loglik += denom.ln() + lx.scale(k) + ly.scale(k);
            } else {
                // No cell explains this report; it keeps the current prior.
                zero_rows += 1;
                accum += &p;
            }
        }
        loglik_trace.push(loglik);

        let scale = 1.0 / n_reports as f64;
        let mut max_change = 0.0f64;
        for i in 0..m {
            for j in 0..n {
                let updated = accum[(i, j)] * scale;
                max_change = max_change.max((updated - p[(i, j)]).abs());
                p[(i, j)] = updated;
            }
        }
        if max_change < cfg.delta_star {
            converged = true;
            break;
        }
    }
    if zero_rows > 0 {
        log::warn!(
            "{zero_rows} of {n_reports} report pairs had zero likelihood under every cell \
             and fell back to the prior"
        );
    }

    debug_assert!((p.sum() - 1.0).abs() < 1e-9);
    Ok(JointEstimate {
        p_hat: p,
        sigma: None,
        loglik_trace,
        iterations,
        converged,
        zero_likelihood_reports: zero_rows,
        n_reports,
    })
}

/// Result of a single-variable EM fit: cell weights in cache order, with the
/// residual category last when the side models one.
#[derive(Clone, Debug)]
pub struct SingleEstimate {
    pub weights: Vec<f64>,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub zero_likelihood_reports: usize,
    pub n_reports: usize,
}

/// Fits one variable's category weights by EM over a prebuilt cache.
///
/// Where the least-squares fit spreads mass the dictionary cannot explain
/// across whichever entries its bit counts happen to graze, this fit works
/// report by report: a report matching no entry's pattern is claimed by the
/// residual category instead, so a partial dictionary stays unbiased.
pub fn em_fit_single(cache: &LikelihoodCache, cfg: &JointConfig) -> Result<SingleEstimate> {
    cfg.validate()?;
    let n_reports = cache.n_reports;
    if n_reports == 0 {
        return Err(Error::Input("no reports to fit".into()));
    }
    let m = cache.n_cells;
    let mut p = vec![1.0 / m as f64; m];
    let mut accum = vec![0.0f64; m];
    let mut loglik_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut zero_rows = 0usize;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        accum.fill(0.0);
        let mut loglik = 0.0;
        zero_rows = 0;
        for k in 0..n_reports {
            let u = cache.row(k);
            let denom: f64 = (0..m).map(|i| p[i] * u[i]).sum();
            if denom > 0.0 && denom.is_finite() {
                let inv = 1.0 / denom;
                for i in 0..m {
                    accum[i] += p[i] * u[i] * inv;
                }
                loglik += denom.ln() + cache.scale(k);
            } else {
                zero_rows += 1;
                for i in 0..m {
                    accum[i] += p[i];
                }
            }
        }
        loglik_trace.push(loglik);

        let scale = 1.0 / n_reports as f64;
        let mut max_change = 0.0f64;
        for i in 0..m {
            let updated = accum[i] * scale;
            max_change = max_change.max((updated - p[i]).abs());
            p[i] = updated;
        }
        if max_change < cfg.delta_star {
            converged = true;
            break;
        }
    }
    if zero_rows > 0 {
        log::warn!(
            "{zero_rows} of {n_reports} reports had zero likelihood under every cell \
             and fell back to the prior"
        );
    }

    debug_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    Ok(SingleEstimate {
        weights: p,
        loglik_trace,
        iterations,
        converged,
        zero_likelihood_reports: zero_rows,
        n_reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{instantaneous_response, FULL_CHANNEL};
    use crate::marginal::fit_marginal;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn basic(k: usize, p: f64, q: f64) -> RapporParams {
        RapporParams::new(k, 1, 0.0, p, q).unwrap()
    }

    fn basic_dict(n: usize, params: &RapporParams) -> CandidateDictionary {
        let entries: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        CandidateDictionary::basic(entries, params).unwrap()
    }

    #[test]
    fn report_prob_deterministic_channel() {
        let params = basic(2, 0.0, 1.0);
        let cand = BitVector::from_bits(&[true, false]);
        let hit = BitVector::from_bits(&[true, false]);
        let miss = BitVector::from_bits(&[false, true]);
        assert_eq!(conditional_report_prob(&hit, &cand, &params), 1.0);
        assert_eq!(conditional_report_prob(&miss, &cand, &params), 0.0);
    }

    #[test]
    fn report_prob_hand_product() {
        let params = basic(3, 0.25, 0.75);
        let cand = BitVector::from_bits(&[true, false, false]);
        let x = BitVector::from_bits(&[true, true, false]);
        let got = conditional_report_prob(&x, &cand, &params);
        assert!((got - 0.140625).abs() < 1e-12, "{got}");
    }

    #[test]
    fn report_prob_matches_per_bit_loop() {
        // Cross-check the popcount shortcut against the direct product.
        let params = RapporParams::new(16, 2, 0.3, 0.2, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let cand = BitVector::from_bits(
                &(0..16).map(|_| rng.random_bool(0.2)).collect::<Vec<_>>(),
            );
            let x = BitVector::from_bits(
                &(0..16).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>(),
            );
            let mut direct = 1.0;
            for s in 0..16 {
                let on = if cand.get(s) {
                    params.q_star()
                } else {
                    params.p_star()
                };
                direct *= if x.get(s) { on } else { 1.0 - on };
            }
            let got = conditional_report_prob(&x, &cand, &params);
            assert!((got - direct).abs() < 1e-14 * (1.0 + direct));
        }
    }

    #[test]
    fn other_prob_examples() {
        let half = OtherProfile {
            bit_probs: vec![0.5; 5],
        };
        let x = BitVector::from_bits(&[true, false, true, false, true]);
        assert!((other_report_prob(&x, &half) - 0.5f64.powi(5)).abs() < 1e-15);

        let hard = OtherProfile {
            bit_probs: vec![1.0, 0.0],
        };
        let exact = BitVector::from_bits(&[true, false]);
        let p = other_report_prob(&exact, &hard);
        assert!(p >= (1.0 - 1e-12f64).powi(2) && p <= 1.0);

        let soft = OtherProfile {
            bit_probs: vec![0.3, 0.7],
        };
        let ones = BitVector::from_bits(&[true, true]);
        assert!((other_report_prob(&ones, &soft) - 0.21).abs() < 1e-12);
    }

    #[test]
    fn profile_degenerates_to_raw_proportions() {
        // Nothing detected, noiseless channel: profile is the plain bit rate.
        let params = basic(3, 0.0, 1.0);
        let dict = basic_dict(3, &params);
        let top = MarginalEstimate {
            frequencies: vec![0.0; 3],
            stderr: vec![0.0; 3],
            detected: vec![],
            other_mass: 1.0,
            n_reports: 4,
            alpha: 0.05,
        };
        let reports = vec![
            BitVector::from_bits(&[true, false, false]),
            BitVector::from_bits(&[true, false, false]),
            BitVector::from_bits(&[false, true, false]),
            BitVector::from_bits(&[false, false, true]),
        ];
        let profile = other_profile(&reports, &top, &params, &dict).unwrap();
        assert!((profile.bit_probs[0] - 0.5).abs() < 1e-12);
        assert!((profile.bit_probs[1] - 0.25).abs() < 1e-12);
        assert!((profile.bit_probs[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn profile_rejects_vanishing_residual() {
        let params = basic(2, 0.0, 1.0);
        let dict = basic_dict(2, &params);
        let top = MarginalEstimate {
            frequencies: vec![0.7, 0.3],
            stderr: vec![0.0; 2],
            detected: vec![0, 1],
            other_mass: 0.0,
            n_reports: 10,
            alpha: 0.05,
        };
        let reports = vec![BitVector::from_bits(&[true, false]); 10];
        match other_profile(&reports, &top, &params, &dict) {
            Err(Error::NegligibleResidualMass { .. }) => {}
            other => panic!("expected residual-mass error, got {other:?}"),
        }
    }

    #[test]
    fn profile_recovers_hidden_string() {
        // Population: 70% a known string, 30% a string missing from the
        // dictionary. The recovered profile should match the hidden string's
        // expected noisy bit rates.
        let params = RapporParams::new(32, 2, 0.0, 0.2, 0.8).unwrap();
        let known = crate::encode::bloom_encode("known", &params, FULL_CHANNEL);
        let hidden = crate::encode::bloom_encode("hidden", &params, FULL_CHANNEL);
        let dict =
            CandidateDictionary::bloom(vec!["known".into()], &params, FULL_CHANNEL)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 100_000;
        let reports: Vec<BitVector> = (0..n)
            .map(|_| {
                let bloom = if rng.random_bool(0.7) { &known } else { &hidden };
                instantaneous_response(bloom, &params, &mut rng)
            })
            .collect();
        let top = fit_marginal(&reports, &dict, &params, 0.05).unwrap();
        assert_eq!(top.detected, vec![0]);
        let profile = other_profile(&reports, &top, &params, &dict).unwrap();
        for s in 0..params.k {
            let expect = if hidden.get(s) {
                params.q_star()
            } else {
                params.p_star()
            };
            assert!(
                (profile.bit_probs[s] - expect).abs() < 0.03,
                "bit {s}: {} vs {expect}",
                profile.bit_probs[s]
            );
        }
    }

    #[test]
    fn noiseless_em_equals_contingency_table() {
        let px = basic(3, 0.0, 1.0);
        let py = basic(2, 0.0, 1.0);
        let dx = basic_dict(3, &px);
        let dy = basic_dict(2, &py);
        let truth = [[0.25, 0.10], [0.05, 0.30], [0.20, 0.10]];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pairs = Vec::new();
        let mut empirical = [[0usize; 2]; 3];
        for _ in 0..500 {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut cell = (2, 1);
            'outer: for i in 0..3 {
                for j in 0..2 {
                    acc += truth[i][j];
                    if u < acc {
                        cell = (i, j);
                        break 'outer;
                    }
                }
            }
            empirical[cell.0][cell.1] += 1;
            pairs.push((dx.column(cell.0).clone(), dy.column(cell.1).clone()));
        }
        let est = em_fit(
            &pairs,
            &JointSide::new(&dx, &px),
            &JointSide::new(&dy, &py),
            &JointConfig::default(),
        )
        .unwrap();
        assert!(est.converged);
        for i in 0..3 {
            for j in 0..2 {
                let expect = empirical[i][j] as f64 / 500.0;
                assert!(
                    (est.p_hat[(i, j)] - expect).abs() < 1e-9,
                    "cell ({i},{j}): {} vs {expect}",
                    est.p_hat[(i, j)]
                );
            }
        }
    }

    /// Observed-data log-likelihood from raw pairs, linear-domain evaluation.
    /// Independent of the cache plumbing used by the solver.
    fn direct_loglik(
        pairs: &[(BitVector, BitVector)],
        dx: &CandidateDictionary,
        dy: &CandidateDictionary,
        px: &RapporParams,
        py: &RapporParams,
        p: &[[f64; 2]; 2],
    ) -> f64 {
        pairs
            .iter()
            .map(|(x, y)| {
                let mut lik = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        lik += p[i][j]
                            * conditional_report_prob(x, dx.column(i), px)
                            * conditional_report_prob(y, dy.column(j), py);
                    }
                }
                lik.ln()
            })
            .sum()
    }

    #[test]
    fn em_matches_brute_force_likelihood_maximum() {
        let px = basic(2, 0.25, 0.75);
        let py = basic(2, 0.25, 0.75);
        let dx = basic_dict(2, &px);
        let dy = basic_dict(2, &py);
        let truth = [[0.4, 0.1], [0.2, 0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(BitVector, BitVector)> = (0..2000)
            .map(|_| {
                let u: f64 = rng.random();
                let cell = if u < 0.4 {
                    (0, 0)
                } else if u < 0.5 {
                    (0, 1)
                } else if u < 0.7 {
                    (1, 0)
                } else {
                    (1, 1)
                };
                (
                    instantaneous_response(dx.column(cell.0), &px, &mut rng),
                    instantaneous_response(dy.column(cell.1), &py, &mut rng),
                )
            })
            .collect();
        let _ = truth;

        let cfg = JointConfig {
            delta_star: 1e-10,
            max_iterations: 50_000,
            ridge: None,
        };
        let est = em_fit(
            &pairs,
            &JointSide::new(&dx, &px),
            &JointSide::new(&dy, &py),
            &cfg,
        )
        .unwrap();
        assert!(est.converged);

        // Nested grid search over the 3-simplex corner parameters.
        let mut best = [[0.25; 2]; 2];
        let mut best_ll = f64::NEG_INFINITY;
        let mut center = (0.25, 0.25, 0.25);
        let mut step = 0.05;
        for _level in 0..9 {
            let lo = |c: f64| (c - 4.0 * step).max(0.0);
            for ia in 0..=8 {
                let a = lo(center.0) + ia as f64 * step;
                for ib in 0..=8 {
                    let b = lo(center.1) + ib as f64 * step;
                    for ic in 0..=8 {
                        let c = lo(center.2) + ic as f64 * step;
                        let d = 1.0 - a - b - c;
                        if d < 0.0 {
                            continue;
                        }
                        let cand = [[a, b], [c, d]];
                        let ll = direct_loglik(&pairs, &dx, &dy, &px, &py, &cand);
                        if ll > best_ll {
                            best_ll = ll;
                            best = cand;
                        }
                    }
                }
            }
            center = (best[0][0], best[0][1], best[1][0]);
            step /= 4.0;
        }

        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (est.p_hat[(i, j)] - best[i][j]).abs() < 1e-6,
                    "cell ({i},{j}): em {} vs grid {}",
                    est.p_hat[(i, j)],
                    best[i][j]
                );
            }
        }
    }

    #[test]
    fn loglik_trace_is_nondecreasing() {
        let px = basic(3, 0.3, 0.7);
        let py = basic(3, 0.3, 0.7);
        let dx = basic_dict(3, &px);
        let dy = basic_dict(3, &py);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let pairs: Vec<(BitVector, BitVector)> = (0..800)
            .map(|_| {
                let i = rng.random_range(0..3);
                let j = (i + usize::from(rng.random_bool(0.3))) % 3;
                (
                    instantaneous_response(dx.column(i), &px, &mut rng),
                    instantaneous_response(dy.column(j), &py, &mut rng),
                )
            })
            .collect();
        let est = em_fit(
            &pairs,
            &JointSide::new(&dx, &px),
            &JointSide::new(&dy, &py),
            &JointConfig::default(),
        )
        .unwrap();
        for w in est.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "loglik dropped: {} -> {}", w[0], w[1]);
        }
        assert!((est.p_hat.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_likelihood_reports_fall_back_to_prior() {
        let px = basic(2, 0.0, 1.0);
        let py = basic(2, 0.0, 1.0);
        let dx = basic_dict(2, &px);
        let dy = basic_dict(2, &py);
        let mut pairs = vec![
            (dx.column(0).clone(), dy.column(0).clone()),
            (dx.column(1).clone(), dy.column(1).clone()),
        ];
        // Impossible under a noiseless one-hot channel.
        pairs.push((BitVector::zeros(2), dy.column(0).clone()));
        let est = em_fit(
            &pairs,
            &JointSide::new(&dx, &px),
            &JointSide::new(&dy, &py),
            &JointConfig::default(),
        )
        .unwrap();
        assert_eq!(est.zero_likelihood_reports, 1);
        assert!((est.p_hat.sum() - 1.0).abs() < 1e-9);
        // The two valid pairs dominate; the ghost report spreads its prior.
        assert!(est.p_hat[(0, 0)] > 0.3 && est.p_hat[(1, 1)] > 0.3);
    }

    #[test]
    fn permutation_equivariance() {
        let px = basic(3, 0.25, 0.75);
        let py = basic(2, 0.25, 0.75);
        let dx = basic_dict(3, &px);
        let dy = basic_dict(2, &py);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pairs: Vec<(BitVector, BitVector)> = (0..400)
            .map(|_| {
                let i = rng.random_range(0..3);
                let j = rng.random_range(0..2);
                (
                    instantaneous_response(dx.column(i), &px, &mut rng),
                    instantaneous_response(dy.column(j), &py, &mut rng),
                )
            })
            .collect();
        let cfg = JointConfig::default();
        let base = em_fit(
            &pairs,
            &JointSide::new(&dx, &px),
            &JointSide::new(&dy, &py),
            &cfg,
        )
        .unwrap();

        // Reverse the X dictionary order and refit.
        let perm = [2usize, 1, 0];
        let dx_perm = dx.subset(&perm).unwrap();
        let permuted = em_fit(
            &pairs,
            &JointSide::new(&dx_perm, &px),
            &JointSide::new(&dy, &py),
            &cfg,
        )
        .unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for j in 0..2 {
                let a = base.p_hat[(old_row, j)];
                let b = permuted.p_hat[(new_row, j)];
                assert!((a - b).abs() < 1e-12, "({new_row},{j}): {a} vs {b}");
            }
        }
    }

    #[test]
    fn other_category_absorbs_hidden_mass() {
        let params = RapporParams::new(32, 2, 0.0, 0.2, 0.8).unwrap();
        let known = crate::encode::bloom_encode("known", &params, FULL_CHANNEL);
        let hidden = crate::encode::bloom_encode("hidden", &params, FULL_CHANNEL);
        let dict =
            CandidateDictionary::bloom(vec!["known".into()], &params, FULL_CHANNEL)
                .unwrap();
        let py = basic(1, 0.0, 1.0);
        let dy = CandidateDictionary::basic(vec!["only".into()], &py).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 20_000;
        let x_reports: Vec<BitVector> = (0..n)
            .map(|_| {
                let bloom = if rng.random_bool(0.5) { &known } else { &hidden };
                instantaneous_response(bloom, &params, &mut rng)
            })
            .collect();
        let top = fit_marginal(&x_reports, &dict, &params, 0.05).unwrap();
        let profile = other_profile(&x_reports, &top, &params, &dict).unwrap();
        let pairs: Vec<(BitVector, BitVector)> = x_reports
            .into_iter()
            .map(|x| (x, dy.column(0).clone()))
            .collect();
        let est = em_fit(
            &pairs,
            &JointSide::new(&dict, &params).with_other(&profile),
            &JointSide::new(&dy, &py),
            &JointConfig::default(),
        )
        .unwrap();
        assert_eq!(est.p_hat.nrows(), 2);
        let rows = est.row_marginals();
        assert!((rows[0] - 0.5).abs() < 0.03, "known mass {}", rows[0]);
        assert!((rows[1] - 0.5).abs() < 0.03, "other mass {}", rows[1]);
    }
}
