use crate::bits::BitVector;
use crate::encode::{basic_encode, bloom_encode, Alphabet, GRAM_CHANNEL};
use crate::error::{Error, Result};
use crate::params::RapporParams;

/// Cap on enumerated n-gram dictionaries (2^21 entries).
pub const DEFAULT_DICT_CAP: usize = 1 << 21;

/// An ordered set of candidate values with their Bloom bit patterns, the
/// design matrix every decoder fits against.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateDictionary {
    entries: Vec<String>,
    columns: Vec<BitVector>,
    k: usize,
}

impl CandidateDictionary {
    /// Encodes `entries` with the channel's Bloom hashes.
    pub fn bloom(entries: Vec<String>, params: &RapporParams, salt: &str) -> Result<Self> {
        let columns = entries
            .iter()
            .map(|e| bloom_encode(e, params, salt))
            .collect();
        Self::build(entries, columns, params.k)
    }

    /// One-hot design for the known-category variant: entry i owns bit i.
    pub fn basic(entries: Vec<String>, params: &RapporParams) -> Result<Self> {
        if entries.len() > params.k {
            return Err(Error::Config(format!(
                "{} categories need at least {} bits, have k = {}",
                entries.len(),
                entries.len(),
                params.k
            )));
        }
        let columns = entries
            .iter()
            .enumerate()
            .map(|(i, _)| basic_encode(i, params))
            .collect::<Result<_>>()?;
        Self::build(entries, columns, params.k)
    }

    /// Explicit bit patterns, for designs neither hashing scheme produces
    /// (e.g. a boolean channel where one value is the all-zero pattern).
    pub fn from_patterns(entries: Vec<String>, columns: Vec<BitVector>) -> Result<Self> {
        if entries.len() != columns.len() {
            return Err(Error::Config(
                "entry and pattern counts differ".to_string(),
            ));
        }
        let k = columns.first().map_or(0, BitVector::len);
        if columns.iter().any(|c| c.len() != k) {
            return Err(Error::Config("patterns have mixed lengths".to_string()));
        }
        Self::build(entries, columns, k)
    }

    fn build(entries: Vec<String>, columns: Vec<BitVector>, k: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("dictionary has no entries".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.as_str()) {
                return Err(Error::Config(format!("duplicate dictionary entry {e:?}")));
            }
        }
        Ok(CandidateDictionary { entries, columns, k })
    }

    /// New dictionary keeping only the entries at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let entries = indices
            .iter()
            .map(|&i| self.entries[i].clone())
            .collect::<Vec<_>>();
        let columns = indices.iter().map(|&i| self.columns[i].clone()).collect();
        Self::build(entries, columns, self.k)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Report length this dictionary decodes, in bits.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &str {
        &self.entries[i]
    }

    pub fn column(&self, i: usize) -> &BitVector {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[BitVector] {
        &self.columns
    }

    pub fn index_of(&self, entry: &str) -> Option<usize> {
        self.entries.iter().position(|e| e == entry)
    }
}

/// Enumerates every length-`n` string over the alphabet (in alphabet order)
/// and encodes it for the gram channel.
pub fn ngram_dictionary(
    alphabet: &Alphabet,
    n: usize,
    gram_params: &RapporParams,
    cap: usize,
) -> Result<CandidateDictionary> {
    if n == 0 {
        return Err(Error::Config("gram length must be positive".into()));
    }
    let size = alphabet
        .len()
        .checked_pow(n as u32)
        .filter(|&s| s <= cap)
        .ok_or(Error::DictionaryTooLarge {
            size: alphabet.len().saturating_pow(n as u32),
            cap,
        })?;
    let symbols = alphabet.chars();
    let mut entries = Vec::with_capacity(size);
    let mut odometer = vec![0usize; n];
    loop {
        entries.push(odometer.iter().map(|&i| symbols[i]).collect::<String>());
        // Advance the rightmost wheel; carry leftward.
        let mut pos = n;
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            odometer[pos] += 1;
            if odometer[pos] < symbols.len() {
                break;
            }
            odometer[pos] = 0;
        }
        if odometer.iter().all(|&i| i == 0) {
            break;
        }
    }
    CandidateDictionary::bloom(entries, gram_params, GRAM_CHANNEL)
}
