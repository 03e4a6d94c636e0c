//! Client-side report encoding.
//!
//! A report of string `x` carries the randomized Bloom filter of the whole
//! padded string on the full channel plus randomized filters of
//! `grams_per_report` n-grams drawn from random aligned slots on the gram
//! channel. Randomization is the usual two layers: a permanent response
//! memoized per (client secret, value) and a fresh instantaneous response.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::BitVector;
use crate::error::{Error, Result};
use crate::params::{split_budget, ChannelShape, RapporParams};

/// Domain-separation salt for the full-string channel.
pub const FULL_CHANNEL: &str = "full";
/// Domain-separation salt for the n-gram channel.
pub const GRAM_CHANNEL: &str = "gram";

/// Ordered character set reports are built from. The padding character is a
/// member, so grams that spill into the padded tail are legal values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "AlphabetRepr", into = "AlphabetRepr")]
pub struct Alphabet {
    chars: Vec<char>,
    padding: char,
}

#[derive(Serialize, Deserialize)]
struct AlphabetRepr {
    chars: String,
    padding: char,
}

impl Alphabet {
    pub fn new(chars: &str, padding: char) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        if chars.is_empty() {
            return Err(Error::Config("alphabet is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &c in &chars {
            if !seen.insert(c) {
                return Err(Error::Config(format!("alphabet repeats {c:?}")));
            }
        }
        if !chars.contains(&padding) {
            return Err(Error::Config(format!(
                "padding char {padding:?} is not in the alphabet"
            )));
        }
        Ok(Alphabet { chars, padding })
    }

    /// Lowercase a-z plus a space as padding; the working default.
    pub fn lowercase() -> Self {
        Alphabet::new("abcdefghijklmnopqrstuvwxyz ", ' ').unwrap()
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn padding(&self) -> char {
        self.padding
    }

    pub fn contains(&self, c: char) -> bool {
        self.chars.contains(&c)
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

impl TryFrom<AlphabetRepr> for Alphabet {
    type Error = Error;
    fn try_from(repr: AlphabetRepr) -> Result<Self> {
        Alphabet::new(&repr.chars, repr.padding)
    }
}

impl From<Alphabet> for AlphabetRepr {
    fn from(a: Alphabet) -> AlphabetRepr {
        AlphabetRepr {
            chars: a.chars.iter().collect(),
            padding: a.padding,
        }
    }
}

/// Everything a cohort of clients and the aggregator must agree on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionConfig {
    /// Strings are truncated or padded to exactly this many characters (M).
    pub max_string_len: usize,
    /// Characters per gram (n); must divide `max_string_len`.
    pub gram_len: usize,
    /// Gram reports per client (r), drawn from distinct slots.
    pub grams_per_report: usize,
    pub alphabet: Alphabet,
    /// Total privacy budget across the full report and all gram reports.
    pub epsilon_total: f64,
    pub full_params: RapporParams,
    pub gram_params: RapporParams,
}

impl CollectionConfig {
    /// Builds a config by splitting `epsilon_total` evenly over the channels.
    pub fn with_budget(
        max_string_len: usize,
        gram_len: usize,
        grams_per_report: usize,
        alphabet: Alphabet,
        epsilon_total: f64,
        full: ChannelShape,
        gram: ChannelShape,
        p: f64,
        f: f64,
    ) -> Result<Self> {
        let split = split_budget(epsilon_total, grams_per_report, full, gram, p, f)?;
        let config = CollectionConfig {
            max_string_len,
            gram_len,
            grams_per_report,
            alphabet,
            epsilon_total,
            full_params: split.full,
            gram_params: split.gram,
        };
        config.validate()?;
        Ok(config)
    }

    /// Builds a config from explicit channel parameters; the total budget is
    /// whatever those channels spend.
    pub fn from_channel_params(
        max_string_len: usize,
        gram_len: usize,
        grams_per_report: usize,
        alphabet: Alphabet,
        full_params: RapporParams,
        gram_params: RapporParams,
    ) -> Result<Self> {
        let epsilon_total =
            full_params.epsilon() + grams_per_report as f64 * gram_params.epsilon();
        let config = CollectionConfig {
            max_string_len,
            gram_len,
            grams_per_report,
            alphabet,
            epsilon_total,
            full_params,
            gram_params,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.full_params.validate()?;
        self.gram_params.validate()?;
        if self.gram_len == 0 {
            return Err(Error::Config("gram length must be positive".into()));
        }
        if self.max_string_len == 0 || self.max_string_len % self.gram_len != 0 {
            return Err(Error::Config(format!(
                "string length {} is not a positive multiple of gram length {}",
                self.max_string_len, self.gram_len
            )));
        }
        if self.grams_per_report > self.num_slots() {
            return Err(Error::Config(format!(
                "{} grams per report exceed the {} available slots",
                self.grams_per_report,
                self.num_slots()
            )));
        }
        let spend = self.full_params.epsilon()
            + self.grams_per_report as f64 * self.gram_params.epsilon();
        if spend > self.epsilon_total + 1e-9 {
            return Err(Error::Config(format!(
                "channels spend epsilon {spend:.4}, over the declared total {:.4}",
                self.epsilon_total
            )));
        }
        Ok(())
    }

    /// Number of aligned gram slots, M/n.
    pub fn num_slots(&self) -> usize {
        self.max_string_len / self.gram_len
    }

    /// Truncates, validates, and right-pads `value` to exactly M characters.
    pub fn pad(&self, value: &str) -> Result<String> {
        let mut chars: Vec<char> = value.chars().take(self.max_string_len).collect();
        for &c in &chars {
            if !self.alphabet.contains(c) {
                return Err(Error::Input(format!(
                    "character {c:?} in {value:?} is outside the alphabet"
                )));
            }
        }
        while chars.len() < self.max_string_len {
            chars.push(self.alphabet.padding());
        }
        Ok(chars.into_iter().collect())
    }

    /// True when `value` would lose characters to padding truncation.
    pub fn truncates(&self, value: &str) -> bool {
        value.chars().count() > self.max_string_len
    }

    /// The gram occupying 1-based slot `slot` of an already padded string.
    pub fn gram_at(&self, padded: &str, slot: usize) -> String {
        let start = (slot - 1) * self.gram_len;
        padded.chars().skip(start).take(self.gram_len).collect()
    }
}

/// One client's randomized report bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientReport {
    pub client_id: String,
    pub full: BitVector,
    pub grams: Vec<GramReport>,
}

/// A randomized n-gram report with its cleartext slot position (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct GramReport {
    pub position: usize,
    pub bits: BitVector,
}

/// Hashes `value` into the channel's Bloom filter: h digests of
/// (salt, hash index, value), each reduced mod k.
pub fn bloom_encode(value: &str, params: &RapporParams, channel_salt: &str) -> BitVector {
    let mut bits = BitVector::zeros(params.k);
    for j in 0..params.h {
        let mut hasher = Sha256::new();
        hasher.update((channel_salt.len() as u32).to_le_bytes());
        hasher.update(channel_salt.as_bytes());
        hasher.update((j as u32).to_le_bytes());
        hasher.update(value.as_bytes());
        let digest = hasher.finalize();
        let word = u64::from_le_bytes(digest[..8].try_into().unwrap());
        bits.set((word % params.k as u64) as usize, true);
    }
    bits
}

/// One-hot encoding for the known-category variant: category `index` owns
/// bit `index` outright.
pub fn basic_encode(index: usize, params: &RapporParams) -> Result<BitVector> {
    if index >= params.k {
        return Err(Error::Config(format!(
            "category index {index} out of range for k = {}",
            params.k
        )));
    }
    let mut bits = BitVector::zeros(params.k);
    bits.set(index, true);
    Ok(bits)
}

/// Derives the memoized-noise seed for a (client secret, channel, value)
/// triple.
pub fn prr_seed(secret: &[u8], channel_salt: &str, value: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((secret.len() as u32).to_le_bytes());
    hasher.update(secret);
    hasher.update((channel_salt.len() as u32).to_le_bytes());
    hasher.update(channel_salt.as_bytes());
    hasher.update(value.as_bytes());
    hasher.finalize().into()
}

/// Permanent response: each bit becomes 1 with probability f/2, 0 with
/// probability f/2, and otherwise keeps its Bloom value. The seed makes the
/// noise a pure function of (client secret, value), so every future report
/// of the same value reuses the same B'.
pub fn permanent_response(bloom: &BitVector, f: f64, seed: [u8; 32]) -> BitVector {
    let mut rng = ChaCha20Rng::from_seed(seed);
    let mut out = BitVector::zeros(bloom.len());
    for i in 0..bloom.len() {
        let u: f64 = rng.random();
        let bit = if u < f / 2.0 {
            true
        } else if u < f {
            false
        } else {
            bloom.get(i)
        };
        out.set(i, bit);
    }
    out
}

/// Instantaneous response: fresh per-report noise, reporting 1 with
/// probability q where B' is set and p where it is not.
pub fn instantaneous_response(
    prr: &BitVector,
    params: &RapporParams,
    rng: &mut impl Rng,
) -> BitVector {
    let mut out = BitVector::zeros(prr.len());
    for i in 0..prr.len() {
        let prob = if prr.get(i) { params.q } else { params.p };
        out.set(i, rng.random_bool(prob));
    }
    out
}

/// Runs the whole client pipeline for one report: pad, pick gram slots,
/// encode and randomize every channel.
///
/// The permanent layer is seeded per (secret, channel, value); the
/// instantaneous layer and the slot choice draw from `rng`.
pub fn make_client_report(
    value: &str,
    config: &CollectionConfig,
    client_id: &str,
    secret: &[u8],
    rng: &mut impl Rng,
) -> Result<ClientReport> {
    let padded = config.pad(value)?;

    let full_bloom = bloom_encode(&padded, &config.full_params, FULL_CHANNEL);
    let full_prr = permanent_response(
        &full_bloom,
        config.full_params.f,
        prr_seed(secret, FULL_CHANNEL, &padded),
    );
    let full = instantaneous_response(&full_prr, &config.full_params, rng);

    let mut slots = draw_slots(config.num_slots(), config.grams_per_report, rng);
    slots.sort_unstable();
    let mut grams = Vec::with_capacity(slots.len());
    for slot in slots {
        let gram = config.gram_at(&padded, slot);
        let bloom = bloom_encode(&gram, &config.gram_params, GRAM_CHANNEL);
        let prr = permanent_response(
            &bloom,
            config.gram_params.f,
            prr_seed(secret, GRAM_CHANNEL, &gram),
        );
        let bits = instantaneous_response(&prr, &config.gram_params, rng);
        grams.push(GramReport {
            position: slot,
            bits,
        });
    }

    Ok(ClientReport {
        client_id: client_id.to_string(),
        full,
        grams,
    })
}

/// Picks `r` distinct 1-based slots uniformly without replacement.
fn draw_slots(num_slots: usize, r: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (1..=num_slots).collect();
    let mut out = Vec::with_capacity(r);
    for _ in 0..r {
        let i = rng.random_range(0..pool.len());
        out.push(pool.swap_remove(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn words(count: usize) -> Vec<String> {
        // Deterministic fake corpus: base-26 spellings.
        (0..count)
            .map(|i| {
                let mut s = String::new();
                let mut v = i;
                for _ in 0..4 {
                    s.push((b'a' + (v % 26) as u8) as char);
                    v /= 26;
                }
                s
            })
            .collect()
    }

    #[test]
    fn bloom_is_deterministic_and_sparse() {
        let params = RapporParams::new(128, 2, 0.0, 0.25, 0.75).unwrap();
        let a = bloom_encode("rabbit", &params, GRAM_CHANNEL);
        let b = bloom_encode("rabbit", &params, GRAM_CHANNEL);
        assert_eq!(a, b);
        assert!(a.count_ones() >= 1 && a.count_ones() <= 2);
        assert_ne!(a, bloom_encode("hermit", &params, GRAM_CHANNEL));
        assert_ne!(a, bloom_encode("rabbit", &params, FULL_CHANNEL));
    }

    #[test]
    fn bloom_collisions_are_rare() {
        let params = RapporParams::new(128, 2, 0.0, 0.25, 0.75).unwrap();
        let corpus = words(1000);
        let encoded: Vec<BitVector> = corpus
            .iter()
            .map(|w| bloom_encode(w, &params, FULL_CHANNEL))
            .collect();
        let mut colliding_pairs = 0usize;
        for i in 0..encoded.len() {
            for j in i + 1..encoded.len() {
                if encoded[i] == encoded[j] {
                    colliding_pairs += 1;
                }
            }
        }
        // Identical patterns need both hashes to agree; expect on the order
        // of 60 such pairs out of half a million.
        let total_pairs = encoded.len() * (encoded.len() - 1) / 2;
        assert!(
            (colliding_pairs as f64) < 1e-3 * total_pairs as f64,
            "{colliding_pairs} colliding pairs"
        );
    }

    #[test]
    fn basic_encode_is_one_hot_bijection() {
        let params = RapporParams::new(5, 1, 0.0, 0.25, 0.75).unwrap();
        let mut seen = std::collections::HashSet::new();
        for index in 0..5 {
            let bits = basic_encode(index, &params).unwrap();
            assert_eq!(bits.count_ones(), 1);
            assert!(bits.get(index));
            assert!(seen.insert(bits.to_hex()));
        }
        assert!(basic_encode(5, &params).is_err());
        // Category 3 of 5 owns exactly bit 3.
        let three = basic_encode(3, &params).unwrap();
        assert_eq!(three.ones().collect::<Vec<_>>(), vec![3]);
    }

    #[test]
    fn prr_identity_when_disabled_and_stable_per_seed() {
        let bloom = BitVector::from_bits(&[true, false, true, true, false, false, true, false]);
        let seed = prr_seed(b"secret", FULL_CHANNEL, "rabbit");
        assert_eq!(permanent_response(&bloom, 0.0, seed), bloom);
        let once = permanent_response(&bloom, 0.5, seed);
        let twice = permanent_response(&bloom, 0.5, seed);
        assert_eq!(once, twice);
        let other_seed = prr_seed(b"secret2", FULL_CHANNEL, "rabbit");
        // Overwhelmingly likely to differ under f = 1 randomization.
        assert_ne!(
            permanent_response(&BitVector::zeros(64), 1.0, seed),
            permanent_response(&BitVector::zeros(64), 1.0, other_seed)
        );
    }

    #[test]
    fn prr_full_noise_hits_half_rate() {
        let bloom = BitVector::from_bits(&[true; 16]);
        let mut ones = vec![0u32; 16];
        let trials = 10_000u32;
        for t in 0..trials {
            let seed = prr_seed(&t.to_le_bytes(), FULL_CHANNEL, "x");
            let out = permanent_response(&bloom, 1.0, seed);
            for (i, count) in ones.iter_mut().enumerate() {
                *count += out.get(i) as u32;
            }
        }
        for count in ones {
            let mean = count as f64 / trials as f64;
            assert!((mean - 0.5).abs() < 0.02, "bit mean {mean}");
        }
    }

    #[test]
    fn irr_noiseless_copies_and_rates_converge() {
        let params = RapporParams::new(16, 2, 0.0, 0.0, 1.0).unwrap();
        let prr = BitVector::from_bits(&[true, false].repeat(8));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(instantaneous_response(&prr, &params, &mut rng), prr);

        let noisy = RapporParams::new(16, 2, 0.0, 0.25, 0.75).unwrap();
        let mut set = vec![0u32; 16];
        let trials = 10_000;
        for _ in 0..trials {
            let out = instantaneous_response(&prr, &noisy, &mut rng);
            for (i, count) in set.iter_mut().enumerate() {
                *count += out.get(i) as u32;
            }
        }
        let sigma = (0.75f64 * 0.25 / trials as f64).sqrt();
        for (i, count) in set.iter().enumerate() {
            let mean = *count as f64 / trials as f64;
            let expect = if prr.get(i) { 0.75 } else { 0.25 };
            assert!((mean - expect).abs() < 3.5 * sigma, "bit {i}: {mean}");
        }
    }

    #[test]
    fn irr_flat_channel_is_uncorrelated() {
        let params = RapporParams::new(1, 1, 0.0, 0.5, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 10_000;
        let (mut sum_b, mut sum_x, mut sum_bx) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let b = rng.random_bool(0.5);
            let prr = BitVector::from_bits(&[b]);
            let x = instantaneous_response(&prr, &params, &mut rng).get(0);
            sum_b += b as u8 as f64;
            sum_x += x as u8 as f64;
            sum_bx += (b && x) as u8 as f64;
        }
        let n = trials as f64;
        let cov = sum_bx / n - (sum_b / n) * (sum_x / n);
        let corr = cov / (0.25f64);
        assert!(corr.abs() < 0.03, "corr = {corr}");
    }

    #[test]
    fn padding_and_truncation() {
        let config = test_config();
        assert_eq!(config.pad("ra").unwrap(), "ra    ");
        assert_eq!(config.pad("rabbitry").unwrap(), "rabbit");
        // Characters past the truncation point never get validated.
        assert_eq!(config.pad("rabbits!?").unwrap(), "rabbit");
        assert!(config.truncates("rabbitry"));
        assert!(!config.truncates("rabbit"));
        let err = config.pad("ra?b").unwrap_err();
        assert!(err.to_string().contains('?'), "{err}");
    }

    #[test]
    fn report_covers_all_channels() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = make_client_report("rabbit", &config, "c1", b"s1", &mut rng).unwrap();
        assert_eq!(report.client_id, "c1");
        assert_eq!(report.full.len(), config.full_params.k);
        assert_eq!(report.grams.len(), 2);
        assert!(report.grams[0].position < report.grams[1].position);
        for gram in &report.grams {
            assert!(gram.position >= 1 && gram.position <= config.num_slots());
            assert_eq!(gram.bits.len(), config.gram_params.k);
        }
    }

    #[test]
    fn noiseless_report_is_the_bloom_filter() {
        let mut config = test_config();
        config.full_params = RapporParams::new(64, 2, 0.0, 0.0, 1.0).unwrap();
        config.gram_params = RapporParams::new(32, 2, 0.0, 0.0, 1.0).unwrap();
        config.epsilon_total = f64::INFINITY;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let report = make_client_report("rabbit", &config, "c", b"s", &mut rng).unwrap();
        assert_eq!(
            report.full,
            bloom_encode("rabbit", &config.full_params, FULL_CHANNEL)
        );
        for gram in &report.grams {
            let text = config.gram_at("rabbit", gram.position);
            assert_eq!(
                gram.bits,
                bloom_encode(&text, &config.gram_params, GRAM_CHANNEL)
            );
        }
    }

    #[test]
    fn slot_choice_is_uniform() {
        let config = test_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u32; 3];
        let trials = 9_999;
        for _ in 0..trials {
            let report = make_client_report("rabbit", &config, "c", b"s", &mut rng).unwrap();
            for gram in &report.grams {
                counts[gram.position - 1] += 1;
            }
        }
        // Each slot should appear in 2/3 of reports.
        let expect = 2.0 / 3.0;
        let sigma = (expect * (1.0 - expect) / trials as f64).sqrt();
        for (i, count) in counts.iter().enumerate() {
            let freq = *count as f64 / trials as f64;
            assert!((freq - expect).abs() < 4.0 * sigma, "slot {i}: {freq}");
        }
    }

    fn test_config() -> CollectionConfig {
        CollectionConfig::from_channel_params(
            6,
            2,
            2,
            Alphabet::lowercase(),
            RapporParams::new(64, 2, 0.0, 0.25, 0.75).unwrap(),
            RapporParams::new(32, 2, 0.0, 0.25, 0.75).unwrap(),
        )
        .unwrap()
    }
}
