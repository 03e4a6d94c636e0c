//! Command line front end for the report pipeline.
//!
//! `encode` turns plaintext values into randomized reports; `decode-marginal`
//! recovers frequencies over a known dictionary; `decode-joint` and
//! `test-independence` work on paired reports; `learn-dict` discovers the
//! reported strings with no dictionary at all; `simulate` runs a configured
//! study end to end. Everything reads and writes JSON, with reports in JSON
//! Lines so shards concatenate.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use rappor_core::bits::BitVector;
use rappor_core::dict::CandidateDictionary;
use rappor_core::encode::{make_client_report, CollectionConfig, FULL_CHANNEL};
use rappor_core::experiment::ExperimentConfig;
use rappor_core::information::{estimate_covariance, independence_test};
use rappor_core::io;
use rappor_core::joint::{em_fit_cached, other_profile, JointConfig, JointSide, LikelihoodCache};
use rappor_core::learn::{learn_distribution, LearnOptions};
use rappor_core::marginal::{fit_marginal, restrict_marginal, select_cells, MarginalEstimate};
use rappor_core::params::RapporParams;
use rappor_core::Error;

#[derive(Parser)]
#[command(name = "rappor", version, about = "Privacy-preserving frequency estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode plaintext values into randomized client reports.
    Encode(EncodeArgs),
    /// Estimate value frequencies from reports over a known dictionary.
    DecodeMarginal(DecodeMarginalArgs),
    /// Fit a joint distribution from paired reports.
    DecodeJoint(JointArgs),
    /// Test whether two jointly reported variables are independent.
    TestIndependence(JointArgs),
    /// Discover the reported strings without a candidate dictionary.
    LearnDict(LearnArgs),
    /// Run a simulation study from a config file.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EncodeArgs {
    /// Collection config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Input file with one value per line.
    #[arg(long)]
    values: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination for the JSON Lines reports.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeMarginalArgs {
    /// Collection config JSON matching the reports.
    #[arg(long)]
    config: PathBuf,
    /// Candidate dictionary: a JSON array of strings.
    #[arg(long)]
    dict: PathBuf,
    /// JSON Lines reports produced by `encode`.
    #[arg(long)]
    reports: PathBuf,
    /// Family-wise significance level for detection.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JointArgs {
    /// Paired reports, one `{"x": hex, "y": hex}` object per line.
    #[arg(long)]
    pairs: PathBuf,
    /// Channel parameters JSON for the first variable.
    #[arg(long)]
    x_params: PathBuf,
    /// Channel parameters JSON for the second variable.
    #[arg(long)]
    y_params: PathBuf,
    /// Candidate values for the first variable: a JSON array of strings.
    #[arg(long)]
    x_dict: PathBuf,
    /// Candidate values for the second variable.
    #[arg(long)]
    y_dict: PathBuf,
    /// How candidate values map to report bits.
    #[arg(long, value_enum, default_value_t = Encoding::Bloom)]
    encoding: Encoding,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Model only the listed candidates, without a residual category.
    #[arg(long)]
    no_other: bool,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Encoding {
    /// Hash each value into its Bloom filter bits.
    Bloom,
    /// Value i owns bit i.
    Basic,
}

#[derive(Args)]
struct LearnArgs {
    /// Collection config JSON matching the reports.
    #[arg(long)]
    config: PathBuf,
    /// JSON Lines reports produced by `encode`.
    #[arg(long)]
    reports: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Fixed joint-frequency threshold for graph edges; each pair's own
    /// noise floor when omitted.
    #[arg(long)]
    delta: Option<f64>,
    /// Scale factor on the per-pair noise floor.
    #[arg(long, default_value_t = 1.0)]
    delta_multiplier: f64,
    /// Keep only candidates of the named shape.
    #[arg(long, value_enum, default_value_t = Shape::Any)]
    filter: Shape,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    /// Keep every assembled candidate.
    Any,
    /// Lowercase host-like strings: letters, digits, dots, dashes, slashes,
    /// with at least one dot.
    Url,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Output path for the summary; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-trial plot table as CSV.
    #[arg(long)]
    plot: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::init();
    match Cli::parse().command {
        Command::Encode(args) => encode(&args),
        Command::DecodeMarginal(args) => decode_marginal(&args),
        Command::DecodeJoint(args) => decode_joint(&args),
        Command::TestIndependence(args) => test_independence(&args),
        Command::LearnDict(args) => learn_dict(&args),
        Command::Simulate(args) => simulate(&args),
    }
}

fn emit(value: &serde_json::Value, out: Option<&PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_config(path: &PathBuf) -> Result<CollectionConfig> {
    let config: CollectionConfig =
        io::read_json(path).with_context(|| format!("reading {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn encode(args: &EncodeArgs) -> Result<()> {
    let config = read_config(&args.config)?;
    let text = std::fs::read_to_string(&args.values)
        .with_context(|| format!("reading {}", args.values.display()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let mut reports = Vec::new();
    let mut truncated = 0usize;
    for (lineno, value) in text.lines().enumerate() {
        if value.is_empty() {
            continue;
        }
        if config.truncates(value) {
            truncated += 1;
        }
        let client_id = format!("c{lineno:06}");
        let report = make_client_report(value, &config, &client_id, client_id.as_bytes(), &mut rng)
            .with_context(|| format!("line {}", lineno + 1))?;
        reports.push(report);
    }
    if reports.is_empty() {
        bail!("no values in {}", args.values.display());
    }
    if truncated > 0 {
        log::warn!("{truncated} values were truncated to the collection length");
    }
    io::write_reports(&args.out, &reports)?;
    eprintln!("{} reports -> {}", reports.len(), args.out.display());
    Ok(())
}

fn decode_marginal(args: &DecodeMarginalArgs) -> Result<()> {
    let config = read_config(&args.config)?;
    let values = io::read_strings(&args.dict)
        .with_context(|| format!("reading {}", args.dict.display()))?;
    let padded = values
        .iter()
        .map(|v| config.pad(v))
        .collect::<rappor_core::Result<Vec<_>>>()?;
    let dict = CandidateDictionary::bloom(padded, &config.full_params, FULL_CHANNEL)?;
    let reports = io::read_reports(&args.reports, &config)?;
    let fulls: Vec<BitVector> = reports.into_iter().map(|r| r.full).collect();
    let est = fit_marginal(&fulls, &dict, &config.full_params, args.alpha)?;

    let estimates: Vec<_> = values
        .iter()
        .enumerate()
        .map(|(i, value)| {
            json!({
                "value": value,
                "frequency": est.frequencies[i],
                "stderr": est.stderr[i],
                "detected": est.detected.contains(&i),
            })
        })
        .collect();
    let detected: Vec<_> = est
        .detected_ranked()
        .into_iter()
        .map(|(i, freq)| json!({ "value": values[i], "frequency": freq }))
        .collect();
    emit(
        &json!({
            "n_reports": est.n_reports,
            "alpha": est.alpha,
            "other_mass": est.other_mass,
            "detected": detected,
            "estimates": estimates,
        }),
        args.out.as_ref(),
    )
}

struct JointFit {
    x_labels: Vec<String>,
    y_labels: Vec<String>,
    estimate: rappor_core::JointEstimate,
    test: rappor_core::IndependenceResult,
}

fn side_dictionary(
    path: &PathBuf,
    params: &RapporParams,
    encoding: Encoding,
    salt: &str,
) -> Result<(Vec<String>, CandidateDictionary)> {
    let entries =
        io::read_strings(path).with_context(|| format!("reading {}", path.display()))?;
    let dict = match encoding {
        Encoding::Bloom => CandidateDictionary::bloom(entries.clone(), params, salt)?,
        Encoding::Basic => CandidateDictionary::basic(entries.clone(), params)?,
    };
    Ok((entries, dict))
}

fn side_labels(entries: &[String], keep: &[usize], other: bool) -> Vec<String> {
    let mut labels: Vec<String> = keep.iter().map(|&i| entries[i].clone()).collect();
    if other {
        labels.push("(other)".to_string());
    }
    labels
}

fn fit_joint(args: &JointArgs) -> Result<JointFit> {
    let x_params: RapporParams = io::read_json(&args.x_params)?;
    let y_params: RapporParams = io::read_json(&args.y_params)?;
    x_params.validate()?;
    y_params.validate()?;
    let (x_entries, x_dict) = side_dictionary(&args.x_dict, &x_params, args.encoding, "x")?;
    let (y_entries, y_dict) = side_dictionary(&args.y_dict, &y_params, args.encoding, "y")?;

    let pairs = io::read_pairs(&args.pairs, x_params.k, y_params.k)?;
    if pairs.is_empty() {
        bail!("no pairs in {}", args.pairs.display());
    }
    let xs: Vec<BitVector> = pairs.iter().map(|(x, _)| x.clone()).collect();
    let ys: Vec<BitVector> = pairs.iter().map(|(_, y)| y.clone()).collect();

    let x_marg = fit_marginal(&xs, &x_dict, &x_params, args.alpha)?;
    let y_marg = fit_marginal(&ys, &y_dict, &y_params, args.alpha)?;
    let x_keep = select_cells(&x_marg, None)?;
    let y_keep = select_cells(&y_marg, None)?;
    let (x_sub, x_est) = restrict_marginal(&x_marg, &x_dict, &x_keep)?;
    let (y_sub, y_est) = restrict_marginal(&y_marg, &y_dict, &y_keep)?;

    let x_profile = maybe_profile(!args.no_other, &xs, &x_est, &x_params, &x_sub)?;
    let y_profile = maybe_profile(!args.no_other, &ys, &y_est, &y_params, &y_sub)?;
    let mut x_side = JointSide::new(&x_sub, &x_params);
    if let Some(ref profile) = x_profile {
        x_side = x_side.with_other(profile);
    }
    let mut y_side = JointSide::new(&y_sub, &y_params);
    if let Some(ref profile) = y_profile {
        y_side = y_side.with_other(profile);
    }

    let lx = LikelihoodCache::build(&xs, &x_side)?;
    let ly = LikelihoodCache::build(&ys, &y_side)?;
    let cfg = JointConfig::default();
    let mut estimate = em_fit_cached(&lx, &ly, &cfg)?;
    estimate_covariance(&mut estimate, &lx, &ly, &cfg)?;
    let test = independence_test(&estimate, args.alpha)?;

    Ok(JointFit {
        x_labels: side_labels(&x_entries, &x_keep, x_profile.is_some()),
        y_labels: side_labels(&y_entries, &y_keep, y_profile.is_some()),
        estimate,
        test,
    })
}

fn maybe_profile(
    include: bool,
    reports: &[BitVector],
    top: &MarginalEstimate,
    params: &RapporParams,
    dict: &CandidateDictionary,
) -> Result<Option<rappor_core::OtherProfile>> {
    if !include {
        return Ok(None);
    }
    match other_profile(reports, top, params, dict) {
        Ok(profile) => Ok(Some(profile)),
        Err(Error::NegligibleResidualMass { mass, .. }) => {
            log::info!("residual mass {mass:.2e} is negligible; no residual category");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn independence_json(fit: &JointFit) -> serde_json::Value {
    json!({
        "statistic": fit.test.statistic,
        "df": fit.test.df,
        "p_value": fit.test.p_value,
        "reject": fit.test.reject,
        "alpha": fit.test.alpha,
    })
}

fn decode_joint(args: &JointArgs) -> Result<()> {
    let fit = fit_joint(args)?;
    let sigma = fit.estimate.sigma.as_ref().expect("covariance was computed");
    let ncols = fit.y_labels.len();
    let mut cells = Vec::new();
    for (r, x_label) in fit.x_labels.iter().enumerate() {
        for (c, y_label) in fit.y_labels.iter().enumerate() {
            let flat = r * ncols + c;
            cells.push(json!({
                "x": x_label,
                "y": y_label,
                "estimate": fit.estimate.p_hat[(r, c)],
                "stderr": sigma[(flat, flat)].max(0.0).sqrt(),
            }));
        }
    }
    emit(
        &json!({
            "x_labels": fit.x_labels,
            "y_labels": fit.y_labels,
            "cells": cells,
            "n_reports": fit.estimate.n_reports,
            "iterations": fit.estimate.iterations,
            "converged": fit.estimate.converged,
            "log_likelihood": fit.estimate.loglik_trace.last(),
            "zero_likelihood_reports": fit.estimate.zero_likelihood_reports,
            "independence": independence_json(&fit),
        }),
        args.out.as_ref(),
    )
}

fn test_independence(args: &JointArgs) -> Result<()> {
    let fit = fit_joint(args)?;
    let mut value = independence_json(&fit);
    value["n_reports"] = json!(fit.estimate.n_reports);
    value["table_shape"] = json!([fit.x_labels.len(), fit.y_labels.len()]);
    emit(&value, args.out.as_ref())
}

fn learn_dict(args: &LearnArgs) -> Result<()> {
    let config = read_config(&args.config)?;
    let reports = io::read_reports(&args.reports, &config)?;
    let url_filter = |s: &str| {
        s.contains('.')
            && s.chars()
                .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || "./-".contains(c))
    };
    let options = LearnOptions {
        delta_override: args.delta,
        delta_multiplier: args.delta_multiplier,
        filter: match args.filter {
            Shape::Any => None,
            Shape::Url => Some(&url_filter),
        },
        ..LearnOptions::default()
    };
    let learned = learn_distribution(&reports, &config, args.alpha, &options)?;

    let detected: Vec<_> = learned
        .detected_strings
        .iter()
        .map(|(value, freq)| json!({ "value": value, "frequency": freq }))
        .collect();
    let edges: Vec<_> = learned
        .per_pair_edges
        .iter()
        .map(|&(g1, g2, count, delta)| {
            json!({ "positions": [g1, g2], "edges": count, "delta": delta })
        })
        .collect();
    emit(
        &json!({
            "n_reports": learned.estimate.n_reports,
            "alpha": learned.estimate.alpha,
            "candidate_count": learned.candidate_count,
            "per_position_detected": learned.per_position_detected,
            "per_pair_edges": edges,
            "other_mass": learned.estimate.other_mass,
            "detected": detected,
        }),
        args.out.as_ref(),
    )
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut config: ExperimentConfig =
        io::read_json(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    let (result, plot) = rappor_core::run_experiment(&config)?;
    if let Some(path) = &args.plot {
        std::fs::write(path, plot.to_csv())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    log::info!("run took {:.1}s", result.runtime_seconds);
    emit(&serde_json::to_value(&result)?, args.out.as_ref())
}
