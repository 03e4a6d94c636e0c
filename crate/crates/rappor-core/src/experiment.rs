//! Repeatable simulation experiments over the full encode/decode pipeline.
//!
//! An [`ExperimentConfig`] names one of four modes and a seed; [`run_experiment`]
//! replays it into an [`ExperimentResult`] (summary metrics, JSON-friendly) and
//! a [`PlotTable`] (per-trial rows, CSV-friendly). The same config and seed
//! always produce byte-identical outputs, so experiment artifacts can be
//! diffed across machines and code revisions.
//!
//! Modes:
//! - `joint`: paired categorical reports with a tunable association knob;
//!   measures cell-level recovery of the joint table and runs the dependence
//!   test.
//! - `playstore`: a category channel crossed with a boolean flag channel,
//!   from a CSV of `category,paid` rows or a synthetic generator.
//! - `unknown_dict`: strings collected without a dictionary; mines candidate
//!   strings from gram co-occurrences and scores recovery of the true support.
//! - `independence_qq`: repeated independent draws; collects the test's
//!   p-values for calibration checks.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::bits::BitVector;
use crate::dict::CandidateDictionary;
use crate::encode::{
    basic_encode, bloom_encode, instantaneous_response, make_client_report, permanent_response,
    prr_seed, CollectionConfig,
};
use crate::error::{Error, Result};
use crate::information::{estimate_covariance, independence_test, IndependenceResult};
use crate::joint::{em_fit_cached, other_profile, JointConfig, JointSide, LikelihoodCache};
use crate::learn::{learn_distribution, LearnOptions};
use crate::marginal::{fit_marginal, restrict_marginal, select_cells, MarginalEstimate};
use crate::params::RapporParams;
use crate::sim::{false_negative_rate, hellinger, DistributionSpec};
use crate::stats::normal_quantile;

/// Label used for a residual row or column in flattened cell names.
pub const OTHER_LABEL: &str = "(other)";

/// A complete, replayable experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    #[serde(flatten)]
    pub mode: ModeConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mode-specific settings; the `mode` tag selects the variant.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ModeConfig {
    Joint(JointModeConfig),
    Playstore(PlaystoreModeConfig),
    UnknownDict(UnknownDictModeConfig),
    IndependenceQq(QqModeConfig),
}

impl ModeConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModeConfig::Joint(_) => "joint",
            ModeConfig::Playstore(_) => "playstore",
            ModeConfig::UnknownDict(_) => "unknown_dict",
            ModeConfig::IndependenceQq(_) => "independence_qq",
        }
    }
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

/// Paired categorical reports. The true joint table mixes the product of the
/// two marginals with a matched-index component:
/// `t[i][j] = (1 - association) * x[i] * y[j] + association * x[i] * [j == i mod |y|]`,
/// so `association = 0` is exact independence and `1` is a deterministic copy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointModeConfig {
    pub x: DistributionSpec,
    pub y: DistributionSpec,
    #[serde(default)]
    pub association: f64,
    /// Paired reports per trial.
    pub n: usize,
    pub x_params: RapporParams,
    pub y_params: RapporParams,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Model the mass outside the selected cells as a residual category.
    #[serde(default = "default_true")]
    pub include_other: bool,
    /// Keep the `m` highest-frequency X cells instead of the significant ones.
    #[serde(default)]
    pub top_x: Option<usize>,
    #[serde(default)]
    pub top_y: Option<usize>,
    /// Encode through Bloom filters instead of one-hot (basic) encoding.
    #[serde(default)]
    pub bloom: bool,
}

/// Category-by-flag reports, either replayed from a CSV or generated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlaystoreModeConfig {
    pub source: PlaystoreSource,
    /// Bloom-filter channel carrying the category string.
    pub category_params: RapporParams,
    /// One-hot channel carrying the boolean flag; `k` must be 2.
    pub flag_params: RapporParams,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_true")]
    pub include_other: bool,
}

/// Where the `(category, paid)` rows come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PlaystoreSource {
    /// A CSV file with header `category,paid` and `paid` in {0, 1}.
    Csv { path: String },
    /// Zipf-weighted categories whose paid rate climbs linearly with rank,
    /// from `rate_low` for the heaviest category to `rate_high` for the
    /// lightest. Equal rates make the two channels independent.
    Synthetic {
        categories: usize,
        n: usize,
        #[serde(default = "default_rate_low")]
        rate_low: f64,
        #[serde(default = "default_rate_high")]
        rate_high: f64,
    },
}

fn default_rate_low() -> f64 {
    0.15
}

fn default_rate_high() -> f64 {
    0.85
}

/// Strings collected without a dictionary, decoded by gram co-occurrence.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UnknownDictModeConfig {
    pub distribution: DistributionSpec,
    /// Clients per trial.
    pub n: usize,
    pub collection: CollectionSpec,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub delta_override: Option<f64>,
    #[serde(default = "default_one")]
    pub delta_multiplier: f64,
    /// Strings below this true weight do not count as misses. Defaults to the
    /// detection floor a thousand-entry dictionary would need at this `n`.
    #[serde(default)]
    pub fnr_floor: Option<f64>,
}

/// Collection settings, with channel parameters given either explicitly or
/// through a total privacy budget split evenly across the channels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollectionSpec {
    pub max_string_len: usize,
    pub gram_len: usize,
    pub grams_per_report: usize,
    /// Alphabet characters; lowercase a-z when omitted.
    #[serde(default)]
    pub alphabet: Option<String>,
    #[serde(default)]
    pub padding: Option<char>,
    #[serde(default)]
    pub full_params: Option<RapporParams>,
    #[serde(default)]
    pub gram_params: Option<RapporParams>,
    #[serde(default)]
    pub budget: Option<BudgetSpec>,
}

/// Budget form of [`CollectionSpec`]: shapes plus a total epsilon.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub epsilon_total: f64,
    pub full_k: usize,
    pub full_h: usize,
    pub gram_k: usize,
    pub gram_h: usize,
    pub p: f64,
    #[serde(default)]
    pub f: f64,
}

impl CollectionSpec {
    /// Resolves the spec into a concrete [`CollectionConfig`].
    pub fn build(&self) -> Result<CollectionConfig> {
        let alphabet = match &self.alphabet {
            Some(chars) => crate::encode::Alphabet::new(chars, self.padding.unwrap_or(' '))?,
            None => crate::encode::Alphabet::lowercase(),
        };
        match (&self.full_params, &self.gram_params, &self.budget) {
            (Some(full), Some(gram), None) => CollectionConfig::from_channel_params(
                self.max_string_len,
                self.gram_len,
                self.grams_per_report,
                alphabet,
                full.clone(),
                gram.clone(),
            ),
            (None, None, Some(b)) => CollectionConfig::with_budget(
                self.max_string_len,
                self.gram_len,
                self.grams_per_report,
                alphabet,
                b.epsilon_total,
                crate::params::ChannelShape {
                    k: b.full_k,
                    h: b.full_h,
                },
                crate::params::ChannelShape {
                    k: b.gram_k,
                    h: b.gram_h,
                },
                b.p,
                b.f,
            ),
            _ => Err(Error::Config(
                "give either both channel parameter sets or a budget, not a mix".into(),
            )),
        }
    }
}

/// Repeated independent draws through the joint pipeline, for checking that
/// the dependence test's p-values are uniform when nothing is dependent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QqModeConfig {
    pub x: DistributionSpec,
    pub y: DistributionSpec,
    /// Paired reports per trial.
    pub population: usize,
    pub x_params: RapporParams,
    pub y_params: RapporParams,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub bloom: bool,
}

/// Summary metrics of one experiment; fields irrelevant to the mode stay
/// unset. Serializes deterministically (the wall-clock time is excluded).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mode: String,
    pub seed: u64,
    pub trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hellinger: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_negative_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_positive_count: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_cell_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_cell_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reject_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq_slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qq_intercept: Option<f64>,
    /// Labeled estimates from the first trial: joint cells or learned strings.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detected: Vec<(String, f64)>,
    /// Echo of the configuration that produced this result.
    pub config: serde_json::Value,
    /// Wall-clock runtime; not serialized, so artifacts stay reproducible.
    #[serde(skip)]
    pub runtime_seconds: f64,
}

impl ExperimentResult {
    fn new(mode: &ModeConfig, seed: u64, trials: usize) -> Self {
        ExperimentResult {
            mode: mode.name().to_string(),
            seed,
            trials,
            ..ExperimentResult::default()
        }
    }
}

/// Per-trial rows destined for a CSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn new(headers: &[&str]) -> Self {
        PlotTable {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Renders the table as CSV. Fields containing commas or quotes are
    /// quoted, which keeps labels like `(other)` safe without a dependency.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let escape = |field: &str| -> String {
            if field.contains(',') || field.contains('"') || field.contains('\n') {
                format!("\"{}\"", field.replace('"', "\"\""))
            } else {
                field.to_string()
            }
        };
        out.push_str(
            &self
                .headers
                .iter()
                .map(|h| escape(h))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.iter().map(|f| escape(f)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Runs the configured experiment to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentResult, PlotTable)> {
    config.validate()?;
    let start = Instant::now();
    let (mut result, plot) = match &config.mode {
        ModeConfig::Joint(cfg) => run_joint(config, cfg)?,
        ModeConfig::Playstore(cfg) => run_playstore(config, cfg)?,
        ModeConfig::UnknownDict(cfg) => run_unknown_dict(config, cfg)?,
        ModeConfig::IndependenceQq(cfg) => run_qq(config, cfg)?,
    };
    result.config = serde_json::to_value(config)?;
    result.runtime_seconds = start.elapsed().as_secs_f64();
    Ok((result, plot))
}

/// Derives the per-trial generator so trials are independent but replayable
/// in isolation. The mix is the splitmix64 finalizer.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut z = seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// One randomized-response channel: a labeled dictionary, its parameters,
/// and whether values pass through a Bloom filter or a one-hot code.
struct Channel<'a> {
    labels: &'a [String],
    params: &'a RapporParams,
    salt: &'a str,
    bloom: bool,
}

impl Channel<'_> {
    fn dictionary(&self) -> Result<CandidateDictionary> {
        if self.bloom {
            CandidateDictionary::bloom(self.labels.to_vec(), self.params, self.salt)
        } else {
            CandidateDictionary::basic(self.labels.to_vec(), self.params)
        }
    }

    fn encode(&self, index: usize, secret: &[u8], rng: &mut impl Rng) -> Result<BitVector> {
        let value = &self.labels[index];
        let signal = if self.bloom {
            bloom_encode(value, self.params, self.salt)
        } else {
            basic_encode(index, self.params)?
        };
        let prr = permanent_response(&signal, self.params.f, prr_seed(secret, self.salt, value));
        Ok(instantaneous_response(&prr, self.params, rng))
    }
}

/// Sums the true table down to the fitted cells, with residual row/column
/// absorbing whatever the fit does not model on that side.
fn collapse_table(
    truth: &DMatrix<f64>,
    x_keep: &[usize],
    x_other: bool,
    y_keep: &[usize],
    y_other: bool,
) -> DMatrix<f64> {
    let rows = x_keep.len() + usize::from(x_other);
    let cols = y_keep.len() + usize::from(y_other);
    let x_dropped: Vec<usize> = (0..truth.nrows()).filter(|i| !x_keep.contains(i)).collect();
    let y_dropped: Vec<usize> = (0..truth.ncols()).filter(|j| !y_keep.contains(j)).collect();
    let mut out = DMatrix::zeros(rows, cols);
    for (r, &i) in x_keep.iter().enumerate() {
        for (c, &j) in y_keep.iter().enumerate() {
            out[(r, c)] = truth[(i, j)];
        }
        if y_other {
            out[(r, cols - 1)] = y_dropped.iter().map(|&j| truth[(i, j)]).sum();
        }
    }
    if x_other {
        for (c, &j) in y_keep.iter().enumerate() {
            out[(rows - 1, c)] = x_dropped.iter().map(|&i| truth[(i, j)]).sum();
        }
        if y_other {
            out[(rows - 1, cols - 1)] = x_dropped
                .iter()
                .map(|&i| y_dropped.iter().map(|&j| truth[(i, j)]).sum::<f64>())
                .sum();
        }
    }
    out
}

fn side_labels(names: &[String], keep: &[usize], other: bool) -> Vec<String> {
    let mut labels: Vec<String> = keep.iter().map(|&i| names[i].clone()).collect();
    if other {
        labels.push(OTHER_LABEL.to_string());
    }
    labels
}

/// One fitted-vs-true table comparison.
struct TableTrial {
    x_labels: Vec<String>,
    y_labels: Vec<String>,
    truth: DMatrix<f64>,
    estimate: DMatrix<f64>,
    mean_abs: f64,
    max_abs: f64,
    hellinger: f64,
    test: IndependenceResult,
}

impl TableTrial {
    fn cells(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(self.x_labels.len() * self.y_labels.len());
        for (r, xl) in self.x_labels.iter().enumerate() {
            for (c, yl) in self.y_labels.iter().enumerate() {
                out.push((format!("{xl}|{yl}"), self.estimate[(r, c)]));
            }
        }
        out
    }
}

fn compare_tables(
    x_labels: Vec<String>,
    y_labels: Vec<String>,
    truth: DMatrix<f64>,
    estimate: DMatrix<f64>,
    test: IndependenceResult,
) -> Result<TableTrial> {
    let cells = (truth.nrows() * truth.ncols()) as f64;
    let mut mean_abs = 0.0;
    let mut max_abs: f64 = 0.0;
    for r in 0..truth.nrows() {
        for c in 0..truth.ncols() {
            let err = (estimate[(r, c)] - truth[(r, c)]).abs();
            mean_abs += err;
            max_abs = max_abs.max(err);
        }
    }
    mean_abs /= cells;

    let label = |r: usize, c: usize| format!("{}|{}", x_labels[r], y_labels[c]);
    let mut p = Vec::new();
    let mut q = Vec::new();
    for r in 0..truth.nrows() {
        for c in 0..truth.ncols() {
            p.push((label(r, c), truth[(r, c)]));
            q.push((label(r, c), estimate[(r, c)]));
        }
    }
    scale_into_simplex(&mut p);
    scale_into_simplex(&mut q);
    let h = hellinger(&p, &q)?;
    Ok(TableTrial {
        x_labels,
        y_labels,
        truth,
        estimate,
        mean_abs,
        max_abs,
        hellinger: h,
        test,
    })
}

/// Rounding can push a fitted table's total a hair past one, which the
/// distance functions reject; rescale only in that case.
fn scale_into_simplex(cells: &mut [(String, f64)]) {
    let total: f64 = cells.iter().map(|(_, w)| *w).sum();
    if total > 1.0 {
        for (_, w) in cells.iter_mut() {
            *w /= total;
        }
    }
}

fn run_table_trial(
    x_channel: &Channel,
    y_channel: &Channel,
    draws: &[(usize, usize)],
    truth: &DMatrix<f64>,
    x_names: &[String],
    y_names: &[String],
    alpha: f64,
    include_other: bool,
    top_x: Option<usize>,
    top_y: Option<usize>,
    rng: &mut impl Rng,
) -> Result<TableTrial> {
    let mut x_reports = Vec::with_capacity(draws.len());
    let mut y_reports = Vec::with_capacity(draws.len());
    for (client, &(i, j)) in draws.iter().enumerate() {
        let secret = format!("client-{client:07}");
        x_reports.push(x_channel.encode(i, secret.as_bytes(), rng)?);
        y_reports.push(y_channel.encode(j, secret.as_bytes(), rng)?);
    }

    let x_dict = x_channel.dictionary()?;
    let y_dict = y_channel.dictionary()?;
    let x_marg = fit_marginal(&x_reports, &x_dict, x_channel.params, alpha)?;
    let y_marg = fit_marginal(&y_reports, &y_dict, y_channel.params, alpha)?;
    let x_keep = select_cells(&x_marg, top_x)?;
    let y_keep = select_cells(&y_marg, top_y)?;
    let (x_sub, x_est) = restrict_marginal(&x_marg, &x_dict, &x_keep)?;
    let (y_sub, y_est) = restrict_marginal(&y_marg, &y_dict, &y_keep)?;

    let x_profile = maybe_profile(include_other, &x_reports, &x_est, x_channel.params, &x_sub)?;
    let y_profile = maybe_profile(include_other, &y_reports, &y_est, y_channel.params, &y_sub)?;
    let mut x_side = JointSide::new(&x_sub, x_channel.params);
    if let Some(p) = x_profile.as_ref() {
        x_side = x_side.with_other(p);
    }
    let mut y_side = JointSide::new(&y_sub, y_channel.params);
    if let Some(p) = y_profile.as_ref() {
        y_side = y_side.with_other(p);
    }

    let lx = LikelihoodCache::build(&x_reports, &x_side)?;
    let ly = LikelihoodCache::build(&y_reports, &y_side)?;
    let mut est = em_fit_cached(&lx, &ly, &JointConfig::default())?;
    estimate_covariance(&mut est, &lx, &ly, &JointConfig::default())?;
    let test = independence_test(&est, alpha)?;

    let collapsed = collapse_table(
        truth,
        &x_keep,
        x_profile.is_some(),
        &y_keep,
        y_profile.is_some(),
    );
    compare_tables(
        side_labels(x_names, &x_keep, x_profile.is_some()),
        side_labels(y_names, &y_keep, y_profile.is_some()),
        collapsed,
        est.p_hat.clone(),
        test,
    )
}

fn maybe_profile(
    include_other: bool,
    reports: &[BitVector],
    top: &MarginalEstimate,
    params: &RapporParams,
    dict: &CandidateDictionary,
) -> Result<Option<crate::joint::OtherProfile>> {
    if !include_other {
        return Ok(None);
    }
    match other_profile(reports, top, params, dict) {
        Ok(p) => Ok(Some(p)),
        Err(Error::NegligibleResidualMass { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn aggregate_table_trials(
    result: &mut ExperimentResult,
    plot: &mut PlotTable,
    trials: &[TableTrial],
) {
    for (t, trial) in trials.iter().enumerate() {
        for (r, xl) in trial.x_labels.iter().enumerate() {
            for (c, yl) in trial.y_labels.iter().enumerate() {
                plot.push(vec![
                    t.to_string(),
                    xl.clone(),
                    yl.clone(),
                    format!("{:.9}", trial.truth[(r, c)]),
                    format!("{:.9}", trial.estimate[(r, c)]),
                ]);
            }
        }
    }
    let means: Vec<f64> = trials.iter().map(|t| t.mean_abs).collect();
    let maxes: Vec<f64> = trials.iter().map(|t| t.max_abs).collect();
    let hs: Vec<f64> = trials.iter().map(|t| t.hellinger).collect();
    result.mean_abs_cell_error = Some(mean(&means));
    result.max_abs_cell_error = maxes.iter().copied().fold(None, |acc: Option<f64>, v| {
        Some(acc.map_or(v, |a| a.max(v)))
    });
    result.hellinger = Some(mean(&hs));
    result.statistic = Some(trials[0].test.statistic);
    result.df = Some(trials[0].test.df);
    result.p_value = Some(trials[0].test.p_value);
    result.reject_fraction = Some(
        trials.iter().filter(|t| t.test.reject).count() as f64 / trials.len() as f64,
    );
    result.detected = trials[0].cells();
}

fn run_joint(
    config: &ExperimentConfig,
    cfg: &JointModeConfig,
) -> Result<(ExperimentResult, PlotTable)> {
    if !(0.0..=1.0).contains(&cfg.association) {
        return Err(Error::Config("association must lie in [0, 1]".into()));
    }
    if cfg.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let mut result = ExperimentResult::new(&config.mode, config.seed, config.trials);
    let mut plot = PlotTable::new(&["trial", "x", "y", "truth", "estimate"]);
    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let mut rng = trial_rng(config.seed, t);
        let (x_names, x_weights) = cfg.x.realize(&mut rng)?;
        let (y_names, y_weights) = cfg.y.realize(&mut rng)?;
        let truth = association_table(&x_weights, &y_weights, cfg.association);
        let draws = sample_cells(&truth, cfg.n, &mut rng);
        let x_channel = Channel {
            labels: &x_names,
            params: &cfg.x_params,
            salt: "x",
            bloom: cfg.bloom,
        };
        let y_channel = Channel {
            labels: &y_names,
            params: &cfg.y_params,
            salt: "y",
            bloom: cfg.bloom,
        };
        trials.push(run_table_trial(
            &x_channel,
            &y_channel,
            &draws,
            &truth,
            &x_names,
            &y_names,
            cfg.alpha,
            cfg.include_other,
            cfg.top_x,
            cfg.top_y,
            &mut rng,
        )?);
    }
    aggregate_table_trials(&mut result, &mut plot, &trials);
    Ok((result, plot))
}

/// The joint-mode truth table; rows keep the X marginal exactly.
pub fn association_table(x: &[f64], y: &[f64], association: f64) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(x.len(), y.len());
    for i in 0..x.len() {
        for j in 0..y.len() {
            let matched = if j == i % y.len() { 1.0 } else { 0.0 };
            t[(i, j)] = (1.0 - association) * x[i] * y[j] + association * x[i] * matched;
        }
    }
    t
}

fn sample_cells(table: &DMatrix<f64>, n: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let flat: Vec<f64> = (0..table.nrows())
        .flat_map(|i| (0..table.ncols()).map(move |j| table[(i, j)]))
        .collect();
    let cumulative = crate::sim::cumulative_weights(&flat);
    (0..n)
        .map(|_| {
            let cell = crate::sim::sample_index(&cumulative, rng.random());
            (cell / table.ncols(), cell % table.ncols())
        })
        .collect()
}

fn run_playstore(
    config: &ExperimentConfig,
    cfg: &PlaystoreModeConfig,
) -> Result<(ExperimentResult, PlotTable)> {
    if cfg.flag_params.k != 2 {
        return Err(Error::Config("the flag channel needs k = 2".into()));
    }
    let flag_names = vec!["free".to_string(), "paid".to_string()];
    let mut result = ExperimentResult::new(&config.mode, config.seed, config.trials);
    let mut plot = PlotTable::new(&["trial", "category", "flag", "truth", "estimate"]);
    let mut trials = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let mut rng = trial_rng(config.seed, t);
        let (cat_names, rows, truth) = playstore_rows(&cfg.source, &mut rng)?;
        let draws: Vec<(usize, usize)> = rows
            .iter()
            .map(|&(cat, paid)| (cat, usize::from(paid)))
            .collect();
        let x_channel = Channel {
            labels: &cat_names,
            params: &cfg.category_params,
            salt: "category",
            bloom: true,
        };
        let y_channel = Channel {
            labels: &flag_names,
            params: &cfg.flag_params,
            salt: "flag",
            bloom: false,
        };
        trials.push(run_table_trial(
            &x_channel,
            &y_channel,
            &draws,
            &truth,
            &cat_names,
            &flag_names,
            cfg.alpha,
            cfg.include_other,
            None,
            Some(2),
            &mut rng,
        )?);
    }
    aggregate_table_trials(&mut result, &mut plot, &trials);
    Ok((result, plot))
}

/// Produces the trial's `(category index, paid)` rows plus the target table.
/// CSV rows give an empirical target; synthetic rows an analytic one.
fn playstore_rows(
    source: &PlaystoreSource,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<String>, Vec<(usize, bool)>, DMatrix<f64>)> {
    match source {
        PlaystoreSource::Csv { path } => {
            let raw = crate::io::read_playstore_csv(path)?;
            if raw.is_empty() {
                return Err(Error::Input(format!("{path} holds no data rows")));
            }
            let mut names: Vec<String> = raw.iter().map(|(c, _)| c.clone()).collect();
            names.sort();
            names.dedup();
            let index: std::collections::HashMap<&str, usize> = names
                .iter()
                .enumerate()
                .map(|(i, n)| (n.as_str(), i))
                .collect();
            let rows: Vec<(usize, bool)> = raw
                .iter()
                .map(|(c, paid)| (index[c.as_str()], *paid))
                .collect();
            let mut truth = DMatrix::zeros(names.len(), 2);
            let share = 1.0 / rows.len() as f64;
            for &(cat, paid) in &rows {
                truth[(cat, usize::from(paid))] += share;
            }
            Ok((names, rows, truth))
        }
        PlaystoreSource::Synthetic {
            categories,
            n,
            rate_low,
            rate_high,
        } => {
            let c = *categories;
            if c == 0 || *n == 0 {
                return Err(Error::Config("categories and n must be positive".into()));
            }
            for rate in [rate_low, rate_high] {
                if !(0.0..=1.0).contains(rate) {
                    return Err(Error::Config("paid rates must lie in [0, 1]".into()));
                }
            }
            let names: Vec<String> = (0..c).map(|i| format!("category{i:02}")).collect();
            let raw: Vec<f64> = (1..=c).map(|i| 1.0 / i as f64).collect();
            let total: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let paid_rate = |i: usize| -> f64 {
                if c == 1 {
                    (rate_low + rate_high) / 2.0
                } else {
                    rate_low + (rate_high - rate_low) * i as f64 / (c - 1) as f64
                }
            };
            let mut truth = DMatrix::zeros(c, 2);
            for i in 0..c {
                truth[(i, 0)] = weights[i] * (1.0 - paid_rate(i));
                truth[(i, 1)] = weights[i] * paid_rate(i);
            }
            let cumulative = crate::sim::cumulative_weights(&weights);
            let rows: Vec<(usize, bool)> = (0..*n)
                .map(|_| {
                    let cat = crate::sim::sample_index(&cumulative, rng.random());
                    (cat, rng.random_bool(paid_rate(cat)))
                })
                .collect();
            Ok((names, rows, truth))
        }
    }
}

/// The true weight below which a miss is excused by default: the one-sided
/// detection bound for a nominal thousand-entry dictionary at this size,
/// using the worst-case standard error of the full-string channel.
pub fn default_fnr_floor(params: &RapporParams, n: usize, alpha: f64) -> f64 {
    let gap = params.q_star() - params.p_star();
    if gap <= 0.0 || n == 0 || !(0.0 < alpha && alpha < 1.0) {
        return f64::INFINITY;
    }
    let Ok(z) = normal_quantile(1.0 - alpha / 1000.0) else {
        return f64::INFINITY;
    };
    z * 0.5 / ((params.h as f64).sqrt() * gap * (n as f64).sqrt())
}

fn run_unknown_dict(
    config: &ExperimentConfig,
    cfg: &UnknownDictModeConfig,
) -> Result<(ExperimentResult, PlotTable)> {
    if cfg.n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let collection = cfg.collection.build()?;
    let floor = cfg
        .fnr_floor
        .unwrap_or_else(|| default_fnr_floor(&collection.full_params, cfg.n, cfg.alpha));
    let mut result = ExperimentResult::new(&config.mode, config.seed, config.trials);
    let mut plot = PlotTable::new(&["trial", "string", "truth", "estimate", "detected"]);
    let mut hs = Vec::with_capacity(config.trials);
    let mut fnrs = Vec::with_capacity(config.trials);
    let mut fps = Vec::with_capacity(config.trials);
    for t in 0..config.trials {
        let mut rng = trial_rng(config.seed, t);
        let (support, weights) = cfg.distribution.realize(&mut rng)?;
        let cumulative = crate::sim::cumulative_weights(&weights);
        let mut reports = Vec::with_capacity(cfg.n);
        for client in 0..cfg.n {
            let value = &support[crate::sim::sample_index(&cumulative, rng.random())];
            let id = format!("client-{client:07}");
            reports.push(make_client_report(
                value,
                &collection,
                &id,
                id.as_bytes(),
                &mut rng,
            )?);
        }
        let options = LearnOptions {
            delta_override: cfg.delta_override,
            delta_multiplier: cfg.delta_multiplier,
            ..LearnOptions::default()
        };
        let learned = learn_distribution(&reports, &collection, cfg.alpha, &options)?;

        let truth: Vec<(String, f64)> = support
            .iter()
            .cloned()
            .zip(weights.iter().copied())
            .collect();
        let mut estimate = learned.detected_strings.clone();
        scale_into_simplex(&mut estimate);
        hs.push(hellinger(&truth, &estimate)?);
        let detected_names: Vec<&String> = learned.detected_strings.iter().map(|(s, _)| s).collect();
        fnrs.push(false_negative_rate(&truth, &detected_names, floor));
        fps.push(
            learned
                .detected_strings
                .iter()
                .filter(|(name, _)| !support.contains(name))
                .count() as f64,
        );

        let estimated: std::collections::HashMap<&str, f64> = learned
            .detected_strings
            .iter()
            .map(|(s, w)| (s.as_str(), *w))
            .collect();
        for (name, weight) in &truth {
            let est = estimated.get(name.as_str()).copied();
            plot.push(vec![
                t.to_string(),
                name.clone(),
                format!("{weight:.9}"),
                format!("{:.9}", est.unwrap_or(0.0)),
                u8::from(est.is_some()).to_string(),
            ]);
        }
        for (name, weight) in &learned.detected_strings {
            if !support.contains(name) {
                plot.push(vec![
                    t.to_string(),
                    name.clone(),
                    format!("{:.9}", 0.0),
                    format!("{weight:.9}"),
                    "1".to_string(),
                ]);
            }
        }
        if t == 0 {
            result.detected = learned.detected_strings.clone();
        }
    }
    result.hellinger = Some(mean(&hs));
    result.false_negative_rate = Some(mean(&fnrs));
    result.false_positive_count = Some(mean(&fps));
    Ok((result, plot))
}

fn run_qq(config: &ExperimentConfig, cfg: &QqModeConfig) -> Result<(ExperimentResult, PlotTable)> {
    if cfg.population == 0 {
        return Err(Error::Config("population must be positive".into()));
    }
    let mut result = ExperimentResult::new(&config.mode, config.seed, config.trials);
    let mut plot = PlotTable::new(&["rank", "expected", "observed"]);
    let mut p_values = Vec::with_capacity(config.trials);
    let mut rejects = 0usize;
    for t in 0..config.trials {
        let mut rng = trial_rng(config.seed, t);
        let (x_names, x_weights) = cfg.x.realize(&mut rng)?;
        let (y_names, y_weights) = cfg.y.realize(&mut rng)?;
        let x_cum = crate::sim::cumulative_weights(&x_weights);
        let y_cum = crate::sim::cumulative_weights(&y_weights);
        let x_channel = Channel {
            labels: &x_names,
            params: &cfg.x_params,
            salt: "x",
            bloom: cfg.bloom,
        };
        let y_channel = Channel {
            labels: &y_names,
            params: &cfg.y_params,
            salt: "y",
            bloom: cfg.bloom,
        };
        let mut x_reports = Vec::with_capacity(cfg.population);
        let mut y_reports = Vec::with_capacity(cfg.population);
        for client in 0..cfg.population {
            let secret = format!("client-{client:07}");
            let i = crate::sim::sample_index(&x_cum, rng.random());
            let j = crate::sim::sample_index(&y_cum, rng.random());
            x_reports.push(x_channel.encode(i, secret.as_bytes(), &mut rng)?);
            y_reports.push(y_channel.encode(j, secret.as_bytes(), &mut rng)?);
        }
        let x_dict = x_channel.dictionary()?;
        let y_dict = y_channel.dictionary()?;
        let x_side = JointSide::new(&x_dict, &cfg.x_params);
        let y_side = JointSide::new(&y_dict, &cfg.y_params);
        let lx = LikelihoodCache::build(&x_reports, &x_side)?;
        let ly = LikelihoodCache::build(&y_reports, &y_side)?;
        let mut est = em_fit_cached(&lx, &ly, &JointConfig::default())?;
        estimate_covariance(&mut est, &lx, &ly, &JointConfig::default())?;
        let test = independence_test(&est, cfg.alpha)?;
        if test.reject {
            rejects += 1;
        }
        p_values.push(test.p_value);
    }

    let mut sorted = p_values.clone();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let expected: Vec<f64> = (0..sorted.len()).map(|i| (i as f64 + 0.5) / m).collect();
    let (slope, intercept) = least_squares(&expected, &sorted);
    for (rank, (e, o)) in expected.iter().zip(sorted.iter()).enumerate() {
        plot.push(vec![
            rank.to_string(),
            format!("{e:.9}"),
            format!("{o:.9}"),
        ]);
    }
    result.qq_slope = Some(slope);
    result.qq_intercept = Some(intercept);
    result.reject_fraction = Some(rejects as f64 / config.trials as f64);
    Ok((result, plot))
}

/// Ordinary least squares of `y` on `x`; a degenerate spread gives slope 0.
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}
