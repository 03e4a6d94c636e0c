//! Single-variable frequency estimation over a known candidate dictionary.
//!
//! Counts per-bit set totals, de-noises them with the channel's effective
//! rates, fits candidate weights by nonnegative least squares against the
//! dictionary's Bloom patterns, and keeps the candidates that pass a
//! Bonferroni-corrected one-sided z-test.

use crate::bits::BitVector;
use crate::dict::CandidateDictionary;
use crate::error::{Error, Result};
use crate::nnls::nnls_sparse;
use crate::params::RapporParams;
use crate::stats::normal_quantile;

/// Fitted marginal distribution over a candidate dictionary.
#[derive(Clone, Debug)]
pub struct MarginalEstimate {
    /// Estimated frequency per dictionary entry (aligned with the dictionary
    /// order); nonnegative, never rescaled.
    pub frequencies: Vec<f64>,
    /// Standard error per entry under the bit-level binomial noise model.
    pub stderr: Vec<f64>,
    /// Indices of entries passing the significance test, ascending.
    pub detected: Vec<usize>,
    /// Mass not explained by detected entries, in [0, 1].
    pub other_mass: f64,
    /// Number of reports the fit consumed.
    pub n_reports: usize,
    /// Family-wise significance level the detection used.
    pub alpha: f64,
}

impl MarginalEstimate {
    /// 1 minus the detected mass, clamped into [0, 1].
    pub fn compute_other_mass(&self) -> f64 {
        let detected_sum: f64 = self.detected.iter().map(|&i| self.frequencies[i]).sum();
        (1.0 - detected_sum).clamp(0.0, 1.0)
    }

    /// Detected entries as (index, frequency), heaviest first.
    pub fn detected_ranked(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .detected
            .iter()
            .map(|&i| (i, self.frequencies[i]))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1));
        out
    }
}

/// Indices of the cells a joint fit should model on one side: the top `m`
/// entries by estimated frequency when `top` is given, otherwise the entries
/// that passed the significance test.
pub fn select_cells(marg: &MarginalEstimate, top: Option<usize>) -> Result<Vec<usize>> {
    match top {
        Some(m) => {
            if m == 0 || m > marg.frequencies.len() {
                return Err(Error::Config(format!(
                    "top-cell count {m} outside 1..={}",
                    marg.frequencies.len()
                )));
            }
            let mut order: Vec<usize> = (0..marg.frequencies.len()).collect();
            order.sort_by(|&a, &b| {
                marg.frequencies[b]
                    .total_cmp(&marg.frequencies[a])
                    .then(a.cmp(&b))
            });
            let mut keep = order[..m].to_vec();
            keep.sort_unstable();
            Ok(keep)
        }
        None => {
            if marg.detected.is_empty() {
                return Err(Error::Input(
                    "no cells passed the detection test; collect more reports".into(),
                ));
            }
            Ok(marg.detected.clone())
        }
    }
}

/// Restricts a fit and its dictionary to the kept indices; everything else
/// becomes residual mass.
pub fn restrict_marginal(
    marg: &MarginalEstimate,
    dict: &CandidateDictionary,
    keep: &[usize],
) -> Result<(CandidateDictionary, MarginalEstimate)> {
    let sub = dict.subset(keep)?;
    let frequencies: Vec<f64> = keep.iter().map(|&i| marg.frequencies[i]).collect();
    let stderr: Vec<f64> = keep.iter().map(|&i| marg.stderr[i]).collect();
    let other_mass = (1.0 - frequencies.iter().sum::<f64>()).clamp(0.0, 1.0);
    let est = MarginalEstimate {
        frequencies,
        stderr,
        detected: (0..keep.len()).collect(),
        other_mass,
        n_reports: marg.n_reports,
        alpha: marg.alpha,
    };
    Ok((sub, est))
}

/// Indices whose frequency clears the Bonferroni-corrected one-sided z-test
/// at family-wise level `alpha`, ascending. This is the detection rule every
/// marginal fit applies.
pub fn significant_entries(
    frequencies: &[f64],
    stderr: &[f64],
    alpha: f64,
) -> Result<Vec<usize>> {
    if frequencies.len() != stderr.len() {
        return Err(Error::Input(format!(
            "{} frequencies but {} standard errors",
            frequencies.len(),
            stderr.len()
        )));
    }
    if frequencies.is_empty() {
        return Ok(Vec::new());
    }
    let z = normal_quantile(1.0 - alpha / frequencies.len() as f64)?;
    Ok((0..frequencies.len())
        .filter(|&i| frequencies[i] > 0.0 && frequencies[i] > z * stderr[i])
        .collect())
}

/// Number of reports with bit s set, for each s. Empty input gives an empty
/// vector; mixed report lengths are an error.
pub fn observed_bit_counts(reports: &[BitVector]) -> Result<Vec<u64>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let k = first.len();
    let mut counts = vec![0u64; k];
    for (idx, report) in reports.iter().enumerate() {
        if report.len() != k {
            return Err(Error::Input(format!(
                "report {idx} has {} bits, expected {k}",
                report.len()
            )));
        }
        for s in report.ones() {
            counts[s] += 1;
        }
    }
    Ok(counts)
}

/// Fits candidate frequencies to the aggregated bit counts.
pub fn fit_marginal(
    reports: &[BitVector],
    dict: &CandidateDictionary,
    params: &RapporParams,
    alpha: f64,
) -> Result<MarginalEstimate> {
    let counts = observed_bit_counts(reports)?;
    fit_marginal_from_counts(&counts, reports.len(), dict, params, alpha)
}

/// Same fit, starting from pre-aggregated bit counts (counts add across
/// report shards).
pub fn fit_marginal_from_counts(
    counts: &[u64],
    n_reports: usize,
    dict: &CandidateDictionary,
    params: &RapporParams,
    alpha: f64,
) -> Result<MarginalEstimate> {
    if n_reports == 0 {
        return Err(Error::Input("no reports to fit".into()));
    }
    if counts.len() != params.k || dict.k() != params.k {
        return Err(Error::Config(format!(
            "bit counts ({}), dictionary ({}) and params (k = {}) disagree",
            counts.len(),
            dict.k(),
            params.k
        )));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Input(format!("alpha {alpha} outside (0, 1)")));
    }
    if params.is_degenerate() {
        return Err(Error::Config(
            "channel parameters carry no signal (p = q or f = 1)".into(),
        ));
    }

    let n = n_reports as f64;
    let q_star = params.q_star();
    let p_star = params.p_star();
    let gap = q_star - p_star;

    // De-noised per-bit rate of true Bloom coverage.
    let y: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 - n * p_star) / (gap * n))
        .collect();

    let cols: Vec<Vec<u32>> = dict
        .columns()
        .iter()
        .map(|c| c.ones().map(|s| s as u32).collect())
        .collect();
    if cols.iter().any(|c| c.is_empty()) && dict.len() > 1 {
        // An all-zero column is only meaningful as the lone complement of a
        // one-bit design; anywhere else it cannot be fit.
        if cols.iter().filter(|c| c.is_empty()).count() > 1 || params.k > 1 {
            return Err(Error::Config(
                "design matrix has an all-zero candidate column".into(),
            ));
        }
    }
    let frequencies = nnls_sparse(&cols, params.k, &y)?;

    // Binomial noise of each candidate's own bits, cross-candidate
    // covariance ignored.
    let stderr: Vec<f64> = cols
        .iter()
        .map(|col| {
            if col.is_empty() {
                return f64::INFINITY;
            }
            let var_sum: f64 = col
                .iter()
                .map(|&s| {
                    let rate = counts[s as usize] as f64 / n;
                    rate * (1.0 - rate)
                })
                .sum();
            var_sum.sqrt() / (col.len() as f64 * gap * n.sqrt())
        })
        .collect();

    let detected = significant_entries(&frequencies, &stderr, alpha)?;

    let mut est = MarginalEstimate {
        frequencies,
        stderr,
        detected,
        other_mass: 0.0,
        n_reports,
        alpha,
    };
    est.other_mass = est.compute_other_mass();
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::{bloom_encode, instantaneous_response, FULL_CHANNEL};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn counts_directly() {
        let reports = vec![
            BitVector::from_bits(&[true, false, true]),
            BitVector::from_bits(&[true, false, false]),
            BitVector::from_bits(&[false, false, true]),
        ];
        assert_eq!(observed_bit_counts(&reports).unwrap(), vec![2, 0, 2]);
        assert!(observed_bit_counts(&[]).unwrap().is_empty());
        let mixed = vec![BitVector::zeros(3), BitVector::zeros(4)];
        assert!(observed_bit_counts(&mixed).is_err());
    }

    #[test]
    fn noiseless_basic_recovers_exact_proportions() {
        let params = RapporParams::new(3, 1, 0.0, 0.0, 1.0).unwrap();
        let dict = CandidateDictionary::basic(
            vec!["a".into(), "b".into(), "c".into()],
            &params,
        )
        .unwrap();
        let mut reports = Vec::new();
        for (index, copies) in [(0usize, 25_000), (1, 15_000), (2, 10_000)] {
            let bits = dict.column(index).clone();
            reports.extend(std::iter::repeat_n(bits, copies));
        }
        let est = fit_marginal(&reports, &dict, &params, 0.05).unwrap();
        // Brute-force count oracle.
        for (i, expect) in [0.5, 0.3, 0.2].iter().enumerate() {
            assert!(
                (est.frequencies[i] - expect).abs() < 1e-9,
                "candidate {i}: {}",
                est.frequencies[i]
            );
        }
        assert_eq!(est.detected, vec![0, 1, 2]);
        assert!(est.other_mass < 1e-9);
    }

    #[test]
    fn other_mass_from_top_five_app_frequencies() {
        // Row masses of the five most common apps in the app-category
        // fixture; the remainder becomes the residual category.
        let top5 = [0.18999, 0.15615, 0.12664, 0.10185, 0.08387];
        let mut frequencies = vec![0.0; 20];
        frequencies[..5].copy_from_slice(&top5);
        let est = MarginalEstimate {
            stderr: vec![0.0; 20],
            detected: vec![0, 1, 2, 3, 4],
            other_mass: 0.0,
            n_reports: 1_000_000,
            alpha: 0.05,
            frequencies,
        };
        assert!((est.compute_other_mass() - 0.3415).abs() < 5e-5);
    }

    #[test]
    fn other_mass_edge_cases() {
        let base = MarginalEstimate {
            frequencies: vec![0.6, 0.4],
            stderr: vec![0.0, 0.0],
            detected: vec![0, 1],
            other_mass: 0.0,
            n_reports: 10,
            alpha: 0.05,
        };
        assert_eq!(base.compute_other_mass(), 0.0);
        let none = MarginalEstimate {
            detected: vec![],
            ..base.clone()
        };
        assert_eq!(none.compute_other_mass(), 1.0);
    }

    #[test]
    fn zipf_detection_lands_in_expected_window() {
        // 100 categories under a rank-inverse law; the corrected threshold
        // sits near rank thirty at this scale, so detection should resolve
        // a meaningful prefix of the ranking without sweeping in the tail.
        let params = RapporParams::new(128, 2, 0.0, 0.25, 0.75).unwrap();
        let entries: Vec<String> = (0..100).map(|i| format!("cat{i:03}")).collect();
        let dict = CandidateDictionary::bloom(entries, &params, FULL_CHANNEL).unwrap();

        let h100: f64 = (1..=100).map(|i| 1.0 / i as f64).sum();
        let weights: Vec<f64> = (1..=100).map(|i| 1.0 / (i as f64 * h100)).collect();
        let mut cumulative = Vec::with_capacity(100);
        let mut acc = 0.0;
        for w in &weights {
            acc += w;
            cumulative.push(acc);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut reports = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rand::Rng::random(&mut rng);
            let idx = cumulative.partition_point(|&c| c < u).min(99);
            reports.push(instantaneous_response(dict.column(idx), &params, &mut rng));
        }
        let est = fit_marginal(&reports, &dict, &params, 0.05).unwrap();
        let detected = est.detected.len();
        assert!(
            (20..=55).contains(&detected),
            "detected {detected} categories"
        );
        // Detected set should be the heaviest ranks, i.e. low indices.
        let ranked = est.detected_ranked();
        assert!(ranked[0].0 < 3, "top detection was {:?}", ranked[0]);
    }

    #[test]
    fn significance_rule_examples() {
        // One clear signal, one zero, one positive but inside the noise band.
        let frequencies = [0.2, 0.0, 0.001];
        let stderr = [0.01, 0.01, 0.01];
        assert_eq!(
            significant_entries(&frequencies, &stderr, 0.05).unwrap(),
            vec![0]
        );
        assert!(significant_entries(&[], &[], 0.05).unwrap().is_empty());
        assert!(significant_entries(&frequencies, &stderr[..2], 0.05).is_err());
        // A tighter family-wise level demands a larger margin.
        let border = [0.021, 0.0];
        let se = [0.01, 0.01];
        assert_eq!(significant_entries(&border, &se, 0.2).unwrap(), vec![0]);
        assert!(significant_entries(&border, &se, 0.001).unwrap().is_empty());
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let params = RapporParams::new(4, 1, 0.0, 0.5, 0.5).unwrap();
        let dict =
            CandidateDictionary::basic(vec!["a".into(), "b".into()], &params).unwrap();
        let reports = vec![BitVector::zeros(4)];
        assert!(fit_marginal(&reports, &dict, &params, 0.05).is_err());

        let live = RapporParams::new(4, 1, 0.0, 0.25, 0.75).unwrap();
        assert!(fit_marginal(&[], &dict, &live, 0.05).is_err());
        assert!(fit_marginal(&reports, &dict, &live, 1.5).is_err());
    }

    #[test]
    fn stderr_scales_with_sample_size() {
        let params = RapporParams::new(16, 2, 0.0, 0.25, 0.75).unwrap();
        let dict = CandidateDictionary::bloom(
            vec!["one".into(), "two".into()],
            &params,
            FULL_CHANNEL,
        )
        .unwrap();
        let bloom = bloom_encode("one", &params, FULL_CHANNEL);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let small: Vec<BitVector> = (0..500)
            .map(|_| instantaneous_response(&bloom, &params, &mut rng))
            .collect();
        let large: Vec<BitVector> = (0..50_000)
            .map(|_| instantaneous_response(&bloom, &params, &mut rng))
            .collect();
        let est_small = fit_marginal(&small, &dict, &params, 0.05).unwrap();
        let est_large = fit_marginal(&large, &dict, &params, 0.05).unwrap();
        let ratio = est_small.stderr[0] / est_large.stderr[0];
        assert!((ratio - 10.0).abs() < 1.5, "ratio {ratio}");
    }
}
