//! Synthetic populations and evaluation metrics for experiments.

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Where a distribution's support comes from: a fixed string list, or fake
/// hash strings (random lowercase a-z) drawn once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SupportSpec {
    Strings(Vec<String>),
    FakeHashes { count: usize, length: usize },
}

impl SupportSpec {
    fn realize(&self, rng: &mut ChaCha8Rng) -> Result<Vec<String>> {
        match self {
            SupportSpec::Strings(strings) => {
                let mut seen = std::collections::HashSet::new();
                for s in strings {
                    if !seen.insert(s) {
                        return Err(Error::Config(format!("duplicate support entry {s:?}")));
                    }
                }
                if strings.is_empty() {
                    return Err(Error::Config("empty support".into()));
                }
                Ok(strings.clone())
            }
            SupportSpec::FakeHashes { count, length } => {
                if *count == 0 || *length == 0 {
                    return Err(Error::Config("fake hashes need count and length".into()));
                }
                let mut seen = std::collections::HashSet::new();
                let mut out = Vec::with_capacity(*count);
                while out.len() < *count {
                    let s: String = (0..*length)
                        .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                        .collect();
                    if seen.insert(s.clone()) {
                        out.push(s);
                    }
                }
                Ok(out)
            }
        }
    }
}

/// A named family of truth distributions over a string support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// Mass proportional to 1/rank^exponent.
    Zipf {
        support: SupportSpec,
        #[serde(default = "default_zipf_exponent")]
        exponent: f64,
    },
    /// Truncated geometric: mass proportional to (1-success)^rank.
    Geometric { support: SupportSpec, success: f64 },
    /// Four strings at 0.12, four at 0.06, the rest sharing the remainder.
    Step { support: SupportSpec },
    Uniform { support: SupportSpec },
    /// Explicit (string, weight) pairs summing to 1.
    Explicit { entries: Vec<(String, f64)> },
}

fn default_zipf_exponent() -> f64 {
    1.0
}

impl DistributionSpec {
    /// Materializes the support and its weights. Fake-hash supports are
    /// drawn from `rng`, so the result is deterministic per seed.
    pub fn realize(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<String>, Vec<f64>)> {
        match self {
            DistributionSpec::Zipf { support, exponent } => {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::Config(format!("bad zipf exponent {exponent}")));
                }
                let support = support.realize(rng)?;
                let raw: Vec<f64> = (1..=support.len())
                    .map(|rank| (rank as f64).powf(-exponent))
                    .collect();
                Ok((support, normalize(raw)))
            }
            DistributionSpec::Geometric { support, success } => {
                if !(0.0 < *success && *success < 1.0) {
                    return Err(Error::Config(format!(
                        "geometric success {success} outside (0, 1)"
                    )));
                }
                let support = support.realize(rng)?;
                let raw: Vec<f64> = (0..support.len())
                    .map(|rank| (1.0 - success).powi(rank as i32) * success)
                    .collect();
                Ok((support, normalize(raw)))
            }
            DistributionSpec::Step { support } => {
                let support = support.realize(rng)?;
                if support.len() < 9 {
                    return Err(Error::Config(format!(
                        "step distribution needs at least 9 strings, got {}",
                        support.len()
                    )));
                }
                let tail = support.len() - 8;
                let weights: Vec<f64> = (0..support.len())
                    .map(|i| {
                        if i < 4 {
                            0.12
                        } else if i < 8 {
                            0.06
                        } else {
                            0.28 / tail as f64
                        }
                    })
                    .collect();
                Ok((support, weights))
            }
            DistributionSpec::Uniform { support } => {
                let support = support.realize(rng)?;
                let w = 1.0 / support.len() as f64;
                let weights = vec![w; support.len()];
                Ok((support, weights))
            }
            DistributionSpec::Explicit { entries } => {
                if entries.is_empty() {
                    return Err(Error::Config("empty explicit distribution".into()));
                }
                let mut seen = std::collections::HashSet::new();
                let mut sum = 0.0;
                for (s, w) in entries {
                    if !seen.insert(s) {
                        return Err(Error::Config(format!("duplicate entry {s:?}")));
                    }
                    if !(w.is_finite() && *w >= 0.0) {
                        return Err(Error::Config(format!("bad weight {w} for {s:?}")));
                    }
                    sum += w;
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "explicit weights sum to {sum}, expected 1"
                    )));
                }
                let (support, weights) = entries.iter().cloned().unzip();
                Ok((support, weights))
            }
        }
    }
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Draws an index from cumulative weights.
pub(crate) fn sample_index(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|&c| c < u)
        .min(cumulative.len() - 1)
}

pub(crate) fn cumulative_weights(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

/// Draws `n` i.i.d. strings from the distribution. The support (for
/// fake-hash specs) and the draws both come from the seed, so identical
/// inputs give identical samples.
pub fn sample_population(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Input("population size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (support, weights) = spec.realize(&mut rng)?;
    let cumulative = cumulative_weights(&weights);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            support[sample_index(&cumulative, u)].clone()
        })
        .collect())
}

/// Hellinger distance between two discrete distributions given as
/// (name, mass) pairs. Mass missing from a listing (up to total 1) is
/// treated as that distribution's own disjoint residual atom, so tails the
/// decoder cannot see still count against it.
pub fn hellinger<A: AsRef<str>, B: AsRef<str>>(p: &[(A, f64)], q: &[(B, f64)]) -> Result<f64> {
    let collect = |pairs: &[(&str, f64)]| -> Result<(HashMap<String, f64>, f64)> {
        let mut map = HashMap::new();
        let mut sum = 0.0;
        for &(name, mass) in pairs {
            if !(mass.is_finite() && mass >= 0.0) {
                return Err(Error::Input(format!("bad mass {mass} for {name:?}")));
            }
            *map.entry(name.to_string()).or_insert(0.0) += mass;
            sum += mass;
        }
        if sum > 1.0 + 1e-9 {
            return Err(Error::Input(format!("masses sum to {sum} > 1")));
        }
        Ok((map, (1.0 - sum).max(0.0)))
    };
    let p_pairs: Vec<(&str, f64)> = p.iter().map(|(s, w)| (s.as_ref(), *w)).collect();
    let q_pairs: Vec<(&str, f64)> = q.iter().map(|(s, w)| (s.as_ref(), *w)).collect();
    let (p_map, p_res) = collect(&p_pairs)?;
    let (q_map, q_res) = collect(&q_pairs)?;

    let mut names: Vec<&String> = p_map.keys().chain(q_map.keys()).collect();
    names.sort();
    names.dedup();
    let mut sq_sum = 0.0;
    for name in names {
        let a = p_map.get(name).copied().unwrap_or(0.0).sqrt();
        let b = q_map.get(name).copied().unwrap_or(0.0).sqrt();
        sq_sum += (a - b) * (a - b);
    }
    // Residual atoms are disjoint between the two distributions.
    sq_sum += p_res + q_res;
    Ok((sq_sum / 2.0).sqrt().min(1.0))
}

/// Fraction of truth strings at or above `floor` that the detected set
/// missed. An empty denominator counts as a perfect 0.
pub fn false_negative_rate<S: AsRef<str>>(
    truth: &[(String, f64)],
    detected: &[S],
    floor: f64,
) -> f64 {
    let detected: std::collections::HashSet<&str> =
        detected.iter().map(|s| s.as_ref()).collect();
    let above: Vec<&str> = truth
        .iter()
        .filter(|(_, w)| *w >= floor)
        .map(|(s, _)| s.as_str())
        .collect();
    if above.is_empty() {
        return 0.0;
    }
    let missed = above.iter().filter(|s| !detected.contains(*s)).count();
    missed as f64 / above.len() as f64
}
