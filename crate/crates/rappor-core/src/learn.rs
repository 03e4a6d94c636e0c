//! Learning an unknown string dictionary from n-gram reports.
//!
//! Clients report a noisy full-string filter plus two noisy grams from
//! random slots of the padded string. The decoder estimates which grams are
//! frequent at each position, fits pairwise joint tables between positions,
//! keeps gram pairs whose joint frequency clears a noise-floor threshold,
//! mines full-length candidates from the resulting k-partite graph, and
//! finally fits the full-string reports against those candidates. The final
//! fit alternates with a residual-profile estimate so mass from strings the
//! mining step missed is absorbed by the residual category instead of
//! inflating near-collision candidates into false detections.

use crate::dict::{ngram_dictionary, CandidateDictionary, DEFAULT_DICT_CAP};
use crate::encode::{ClientReport, CollectionConfig, FULL_CHANNEL};
use crate::error::{Error, Result};
use crate::graph::{find_candidates, CandidateStrings, NGramGraph, DEFAULT_CANDIDATE_CAP};
use crate::joint::{
    em_fit, other_profile, other_profile_from_counts, JointConfig, JointEstimate, JointSide,
    OtherProfile,
};
use crate::marginal::{
    fit_marginal, fit_marginal_from_counts, fit_marginal_residual_from_counts,
    observed_bit_counts, restrict_marginal, MarginalEstimate,
};
use crate::params::RapporParams;

/// Cap on the fit-residual alternation in the final full-string stage.
const RESIDUAL_ROUNDS: usize = 8;

/// Gram reports observed at one slot position (1-based).
#[derive(Clone, Debug)]
pub struct PositionGroup {
    pub position: usize,
    pub reports: Vec<crate::bits::BitVector>,
}

/// Paired gram reports for one unordered position pair, first component from
/// the smaller position.
#[derive(Clone, Debug)]
pub struct PairGroup {
    pub positions: (usize, usize),
    pub pairs: Vec<(crate::bits::BitVector, crate::bits::BitVector)>,
}

/// Splits client reports into per-position and per-position-pair groups.
///
/// Every gram lands in exactly one position group; each report's two grams
/// land in exactly one pair group. All position groups and all C(slots, 2)
/// pair groups are returned, including empty ones.
pub fn group_reports(
    reports: &[ClientReport],
    config: &CollectionConfig,
) -> Result<(Vec<PositionGroup>, Vec<PairGroup>)> {
    config.validate()?;
    if config.grams_per_report > 2 {
        return Err(Error::Input(
            "pair grouping supports at most two grams per report".into(),
        ));
    }
    let slots = config.num_slots();
    let mut positions: Vec<PositionGroup> = (1..=slots)
        .map(|position| PositionGroup {
            position,
            reports: Vec::new(),
        })
        .collect();
    let mut pairs: Vec<PairGroup> = Vec::new();
    let mut pair_index = std::collections::HashMap::new();
    for g1 in 1..=slots {
        for g2 in g1 + 1..=slots {
            pair_index.insert((g1, g2), pairs.len());
            pairs.push(PairGroup {
                positions: (g1, g2),
                pairs: Vec::new(),
            });
        }
    }

    for (idx, report) in reports.iter().enumerate() {
        for gram in &report.grams {
            if gram.position == 0 || gram.position > slots {
                return Err(Error::Input(format!(
                    "report {idx} names slot {} of {slots}",
                    gram.position
                )));
            }
            if gram.bits.len() != config.gram_params.k {
                return Err(Error::Input(format!(
                    "report {idx} gram has {} bits, expected {}",
                    gram.bits.len(),
                    config.gram_params.k
                )));
            }
            positions[gram.position - 1].reports.push(gram.bits.clone());
        }
        if report.grams.len() == 2 {
            let (a, b) = (&report.grams[0], &report.grams[1]);
            let (first, second) = if a.position <= b.position { (a, b) } else { (b, a) };
            if first.position == second.position {
                return Err(Error::Input(format!(
                    "report {idx} repeats slot {}",
                    first.position
                )));
            }
            let key = (first.position, second.position);
            pairs[pair_index[&key]]
                .pairs
                .push((first.bits.clone(), second.bits.clone()));
        }
    }
    Ok((positions, pairs))
}

/// Noise floor for a gram pair's estimated joint frequency, computed from
/// the gram channel's effective rates and the pair group's own sample size.
pub fn pair_threshold(gram_params: &RapporParams, n_group: usize) -> Result<f64> {
    let q2 = gram_params.q_star();
    let p2 = gram_params.p_star();
    if !(q2 > p2) {
        return Err(Error::Config(
            "gram channel carries no signal (q* <= p*)".into(),
        ));
    }
    if n_group == 0 {
        return Err(Error::Input("empty pair group has no threshold".into()));
    }
    Ok((p2 * (1.0 - p2) / ((q2 - p2) * n_group as f64)).sqrt())
}

/// Per-position marginal fits over the full n-gram dictionary.
pub fn position_marginals(
    groups: &[PositionGroup],
    gram_dict: &CandidateDictionary,
    gram_params: &RapporParams,
    alpha: f64,
) -> Result<Vec<MarginalEstimate>> {
    groups
        .iter()
        .map(|group| {
            if group.reports.is_empty() {
                return Err(Error::Input(format!(
                    "no gram reports at position {}; collect more reports",
                    group.position
                )));
            }
            fit_marginal(&group.reports, gram_dict, gram_params, alpha)
        })
        .collect()
}

/// One pair group's joint fit over the detected grams of its two positions.
#[derive(Clone, Debug)]
pub struct PairJoint {
    pub positions: (usize, usize),
    /// Detected grams at each position, in detection order; row/column i of
    /// the estimate is gram i here, with the residual category last.
    pub x_grams: Vec<String>,
    pub y_grams: Vec<String>,
    pub estimate: JointEstimate,
    /// Whether each side carried a residual category.
    pub x_other: bool,
    pub y_other: bool,
    /// Noise floor computed from this group's sample size.
    pub delta: f64,
}

fn side_profile(
    reports: &[crate::bits::BitVector],
    top: &MarginalEstimate,
    params: &RapporParams,
    dict: &CandidateDictionary,
) -> Option<OtherProfile> {
    match other_profile(reports, top, params, dict) {
        Ok(profile) => Some(profile),
        Err(Error::NegligibleResidualMass { .. }) => None,
        Err(err) => {
            log::warn!("residual profile failed: {err}");
            None
        }
    }
}

/// Fits a joint table for every pair group whose two positions both have
/// detections. Groups without data or detections are skipped with a log
/// line and come back as `None`.
pub fn pairwise_joints(
    pair_groups: &[PairGroup],
    marginals: &[MarginalEstimate],
    gram_dict: &CandidateDictionary,
    gram_params: &RapporParams,
    cfg: &JointConfig,
) -> Result<Vec<Option<PairJoint>>> {
    let mut out = Vec::with_capacity(pair_groups.len());
    for group in pair_groups {
        let (g1, g2) = group.positions;
        let mx = &marginals[g1 - 1];
        let my = &marginals[g2 - 1];
        if group.pairs.is_empty() || mx.detected.is_empty() || my.detected.is_empty() {
            log::info!(
                "skipping pair ({g1},{g2}): {} pairs, {}/{} detections",
                group.pairs.len(),
                mx.detected.len(),
                my.detected.len()
            );
            out.push(None);
            continue;
        }
        let (x_dict, x_top) = restrict_marginal(mx, gram_dict, &mx.detected)?;
        let (y_dict, y_top) = restrict_marginal(my, gram_dict, &my.detected)?;
        let x_reports: Vec<_> = group.pairs.iter().map(|(x, _)| x.clone()).collect();
        let y_reports: Vec<_> = group.pairs.iter().map(|(_, y)| y.clone()).collect();
        let x_profile = side_profile(&x_reports, &x_top, gram_params, &x_dict);
        let y_profile = side_profile(&y_reports, &y_top, gram_params, &y_dict);

        let mut x_side = JointSide::new(&x_dict, gram_params);
        if let Some(ref profile) = x_profile {
            x_side = x_side.with_other(profile);
        }
        let mut y_side = JointSide::new(&y_dict, gram_params);
        if let Some(ref profile) = y_profile {
            y_side = y_side.with_other(profile);
        }
        let estimate = em_fit(&group.pairs, &x_side, &y_side, cfg)?;
        out.push(Some(PairJoint {
            positions: group.positions,
            x_grams: x_dict.entries().to_vec(),
            y_grams: y_dict.entries().to_vec(),
            estimate,
            x_other: x_profile.is_some(),
            y_other: y_profile.is_some(),
            delta: pair_threshold(gram_params, group.pairs.len())?,
        }));
    }
    Ok(out)
}

/// Builds the gram graph: partitions are the per-position detections, and a
/// gram pair becomes an edge when its joint frequency exceeds the threshold
/// (the pair's own noise floor scaled by `delta_scale`, or `delta_override`
/// everywhere when given). Residual cells never produce edges.
pub fn significant_pairs(
    joints: &[Option<PairJoint>],
    marginals: &[MarginalEstimate],
    gram_dict: &CandidateDictionary,
    delta_override: Option<f64>,
    delta_scale: f64,
) -> Result<NGramGraph> {
    let partitions: Vec<Vec<String>> = marginals
        .iter()
        .map(|m| {
            m.detected
                .iter()
                .map(|&i| gram_dict.entry(i).to_string())
                .collect()
        })
        .collect();
    let mut graph = NGramGraph::new(partitions);
    for joint in joints.iter().flatten() {
        let (g1, g2) = joint.positions;
        let delta = delta_override.unwrap_or(joint.delta * delta_scale);
        let rows = joint.x_grams.len();
        let cols = joint.y_grams.len();
        for i in 0..rows {
            for j in 0..cols {
                let weight = joint.estimate.p_hat[(i, j)];
                if weight > delta {
                    graph.add_edge((g1 - 1, i), (g2 - 1, j), weight)?;
                }
            }
        }
    }
    Ok(graph)
}

/// Diagnostics and final estimate of a dictionary-learning run.
#[derive(Clone, Debug)]
pub struct DictionaryLearnResult {
    /// Final fit over the discovered candidates (padded strings).
    pub estimate: MarginalEstimate,
    /// Candidate strings tested, padded to the collection length.
    pub candidates: Vec<String>,
    /// Detected strings with padding trimmed, heaviest first.
    pub detected_strings: Vec<(String, f64)>,
    /// Detected gram count per position.
    pub per_position_detected: Vec<usize>,
    /// Edges contributed per position pair, with the threshold each used.
    pub per_pair_edges: Vec<(usize, usize, usize, f64)>,
    pub candidate_count: usize,
}

/// Extra knobs for [`learn_distribution`]; the defaults match the caps used
/// elsewhere in the crate.
pub struct LearnOptions<'a> {
    /// Joint-fit settings for the pairwise analyses.
    pub joint: JointConfig,
    /// Global threshold override; `None` uses each pair's own noise floor.
    pub delta_override: Option<f64>,
    /// Scale factor applied to each pair's noise floor when no override is
    /// set. Values below 1 admit more edges, values above 1 fewer.
    pub delta_multiplier: f64,
    /// Keep only candidates passing this predicate (applied to the trimmed
    /// string). `None` keeps everything.
    pub filter: Option<&'a dyn Fn(&str) -> bool>,
    pub gram_dict_cap: usize,
    pub candidate_cap: usize,
}

impl Default for LearnOptions<'_> {
    fn default() -> Self {
        LearnOptions {
            joint: JointConfig::default(),
            delta_override: None,
            delta_multiplier: 1.0,
            filter: None,
            gram_dict_cap: DEFAULT_DICT_CAP,
            candidate_cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

/// Runs the whole unknown-dictionary pipeline and fits the full-string
/// reports against the discovered candidates at family-wise level `alpha`.
pub fn learn_distribution(
    reports: &[ClientReport],
    config: &CollectionConfig,
    alpha: f64,
    options: &LearnOptions,
) -> Result<DictionaryLearnResult> {
    config.validate()?;
    let gram_dict = ngram_dictionary(
        &config.alphabet,
        config.gram_len,
        &config.gram_params,
        options.gram_dict_cap,
    )?;
    let (position_groups, pair_groups) = group_reports(reports, config)?;
    let marginals =
        position_marginals(&position_groups, &gram_dict, &config.gram_params, alpha)?;
    let per_position_detected: Vec<usize> =
        marginals.iter().map(|m| m.detected.len()).collect();

    let joints = pairwise_joints(
        &pair_groups,
        &marginals,
        &gram_dict,
        &config.gram_params,
        &options.joint,
    )?;
    let graph = significant_pairs(
        &joints,
        &marginals,
        &gram_dict,
        options.delta_override,
        options.delta_multiplier,
    )?;

    let per_pair_edges: Vec<(usize, usize, usize, f64)> = joints
        .iter()
        .flatten()
        .map(|joint| {
            let (g1, g2) = joint.positions;
            let delta = options
                .delta_override
                .unwrap_or(joint.delta * options.delta_multiplier);
            let count = (0..joint.x_grams.len())
                .flat_map(|i| (0..joint.y_grams.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| joint.estimate.p_hat[(i, j)] > delta)
                .count();
            (g1, g2, count, delta)
        })
        .collect();

    let mined: CandidateStrings = find_candidates(&graph, options.candidate_cap)?;
    let padding = config.alphabet.padding();
    // The encoder only ever pads string ends, so a candidate with padding
    // before a non-padding character cannot be a real value.
    let candidates: Vec<String> = mined
        .strings
        .into_iter()
        .filter(|s| {
            let trimmed = s.trim_end_matches(padding);
            !trimmed.contains(padding)
                && options.filter.is_none_or(|keep| keep(trimmed))
        })
        .collect();

    if candidates.is_empty() {
        return Ok(DictionaryLearnResult {
            estimate: MarginalEstimate {
                frequencies: Vec::new(),
                stderr: Vec::new(),
                detected: Vec::new(),
                other_mass: 1.0,
                n_reports: reports.len(),
                alpha,
            },
            candidates: Vec::new(),
            detected_strings: Vec::new(),
            per_position_detected,
            per_pair_edges,
            candidate_count: 0,
        });
    }

    let full_dict =
        CandidateDictionary::bloom(candidates.clone(), &config.full_params, FULL_CHANNEL)?;
    let full_reports: Vec<crate::bits::BitVector> =
        reports.iter().map(|r| r.full.clone()).collect();
    let full_counts = observed_bit_counts(&full_reports)?;
    let n_reports = full_reports.len();
    let mut estimate =
        fit_marginal_from_counts(&full_counts, n_reports, &full_dict, &config.full_params, alpha)?;
    for _ in 0..RESIDUAL_ROUNDS {
        if estimate.detected.is_empty() {
            break;
        }
        let profile = match other_profile_from_counts(
            &full_counts,
            n_reports,
            &estimate,
            &config.full_params,
            &full_dict,
        ) {
            Ok(profile) => profile,
            Err(Error::NegligibleResidualMass { .. }) => break,
            Err(err) => return Err(err),
        };
        let next = fit_marginal_residual_from_counts(
            &full_counts,
            n_reports,
            &full_dict,
            &config.full_params,
            alpha,
            &profile.bit_probs,
            estimate.compute_other_mass(),
        )?;
        let stable = next.detected == estimate.detected;
        estimate = next;
        if stable {
            break;
        }
    }

    let mut detected_strings: Vec<(String, f64)> = estimate
        .detected
        .iter()
        .map(|&i| {
            (
                candidates[i].trim_end_matches(padding).to_string(),
                estimate.frequencies[i],
            )
        })
        .collect();
    detected_strings.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    Ok(DictionaryLearnResult {
        candidate_count: candidates.len(),
        estimate,
        candidates,
        detected_strings,
        per_position_detected,
        per_pair_edges,
    })
}
