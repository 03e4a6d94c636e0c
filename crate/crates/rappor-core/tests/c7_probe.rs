//! Temporary diagnostic for the desk-scale dictionary recovery gate.

use std::collections::HashSet;

use rappor_core::experiment::{
    run_experiment, trial_rng, CollectionSpec, ExperimentConfig, ModeConfig,
    UnknownDictModeConfig,
};
use rappor_core::params::RapporParams;
use rappor_core::sim::{DistributionSpec, SupportSpec};
use rappor_core::Result;

fn bloom_params() -> RapporParams {
    RapporParams {
        k: 128,
        h: 2,
        f: 0.0,
        p: 0.25,
        q: 0.75,
    }
}

fn zipf_hashes(count: usize) -> DistributionSpec {
    DistributionSpec::Zipf {
        support: SupportSpec::FakeHashes { count, length: 6 },
        exponent: 1.0,
    }
}

#[test]
fn probe_three_seeds() -> Result<()> {
    for run in 0..3u64 {
        let seed = 7_000 + run;
        let config = ExperimentConfig {
            seed,
            trials: 1,
            mode: ModeConfig::UnknownDict(UnknownDictModeConfig {
                distribution: zipf_hashes(100),
                n: 100_000,
                collection: CollectionSpec {
                    max_string_len: 6,
                    gram_len: 2,
                    grams_per_report: 2,
                    alphabet: None,
                    padding: None,
                    full_params: Some(bloom_params()),
                    gram_params: Some(bloom_params()),
                    budget: None,
                },
                alpha: 0.05,
                delta_override: None,
                delta_multiplier: 1.0,
                fnr_floor: None,
            }),
        };
        let (result, _) = run_experiment(&config)?;
        let mut rng = trial_rng(seed, 0);
        let (support, weights) = zipf_hashes(100).realize(&mut rng)?;
        let support_set: HashSet<&str> = support.iter().map(|s| s.as_str()).collect();
        let detected: Vec<&str> = result.detected.iter().map(|(s, _)| s.as_str()).collect();
        let hits = support[..7]
            .iter()
            .filter(|s| detected.contains(&s.as_str()))
            .count();
        println!("== seed {seed}: top-7 hits {hits}, fp {:?}", result.false_positive_count);
        println!("   hellinger {:?} fnr {:?}", result.hellinger, result.false_negative_rate);
        println!("   true top-10:");
        for (s, w) in support.iter().zip(weights.iter()).take(10) {
            let mark = if detected.contains(&s.as_str()) { "HIT " } else { "MISS" };
            println!("     {mark} {s} {w:.4}");
        }
        println!("   detected ({}):", result.detected.len());
        for (s, w) in &result.detected {
            let mark = if support_set.contains(s.as_str()) { "ok" } else { "FP" };
            println!("     {mark} {s:?} {w:.4}");
        }
    }
    Ok(())
}
