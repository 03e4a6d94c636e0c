//! File formats for moving reports, dictionaries, and configs around.
//!
//! Bit vectors travel as lowercase hex. Report collections use JSON Lines so
//! shards concatenate; dictionaries and configs are plain JSON. The playstore
//! rows use a two-column CSV with header `category,paid`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bits::BitVector;
use crate::encode::{ClientReport, CollectionConfig, GramReport};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ReportLine {
    client_id: String,
    full: String,
    grams: Vec<GramLine>,
}

#[derive(Serialize, Deserialize)]
struct GramLine {
    position: usize,
    bits: String,
}

/// Writes one JSON object per client report.
pub fn write_reports(path: impl AsRef<Path>, reports: &[ClientReport]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for report in reports {
        let line = ReportLine {
            client_id: report.client_id.clone(),
            full: report.full.to_hex(),
            grams: report
                .grams
                .iter()
                .map(|g| GramLine {
                    position: g.position,
                    bits: g.bits.to_hex(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads reports written by [`write_reports`]. The collection config supplies
/// the bit widths, which hex alone cannot pin down.
pub fn read_reports(
    path: impl AsRef<Path>,
    config: &CollectionConfig,
) -> Result<Vec<ClientReport>> {
    let file = fs::File::open(&path)?;
    let mut reports = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ReportLine = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("line {}: {e}", lineno + 1))
        })?;
        let full = BitVector::from_hex(&parsed.full, config.full_params.k)?;
        let grams = parsed
            .grams
            .into_iter()
            .map(|g| {
                Ok(GramReport {
                    position: g.position,
                    bits: BitVector::from_hex(&g.bits, config.gram_params.k)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(ClientReport {
            client_id: parsed.client_id,
            full,
            grams,
        });
    }
    Ok(reports)
}

#[derive(Serialize, Deserialize)]
struct PairLine {
    x: String,
    y: String,
}

/// Writes paired reports, one `{x, y}` object per line.
pub fn write_pairs(path: impl AsRef<Path>, pairs: &[(BitVector, BitVector)]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (x, y) in pairs {
        let line = PairLine {
            x: x.to_hex(),
            y: y.to_hex(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads pairs written by [`write_pairs`] at the given bit widths.
pub fn read_pairs(
    path: impl AsRef<Path>,
    x_bits: usize,
    y_bits: usize,
) -> Result<Vec<(BitVector, BitVector)>> {
    let file = fs::File::open(&path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PairLine = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("line {}: {e}", lineno + 1))
        })?;
        pairs.push((
            BitVector::from_hex(&parsed.x, x_bits)?,
            BitVector::from_hex(&parsed.y, y_bits)?,
        ));
    }
    Ok(pairs)
}

/// Reads a JSON array of strings (a candidate dictionary).
pub fn read_strings(path: impl AsRef<Path>) -> Result<Vec<String>> {
    read_json(path)
}

pub fn write_strings(path: impl AsRef<Path>, strings: &[String]) -> Result<()> {
    write_json(path, &strings)
}

/// Reads any JSON value into a deserializable type.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-prints a value as JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads `category,paid` rows; `paid` must be 0 or 1.
pub fn read_playstore_csv(path: impl AsRef<Path>) -> Result<Vec<(String, bool)>> {
    let text = fs::read_to_string(&path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == "category,paid" => {}
        Some((_, header)) => {
            return Err(Error::Input(format!(
                "expected header 'category,paid', found {header:?}"
            )));
        }
        None => return Err(Error::Input("empty csv".into())),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let Some((category, flag)) = line.rsplit_once(',') else {
            return Err(Error::Input(format!("line {}: not two fields", lineno + 1)));
        };
        let paid = match flag.trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Input(format!(
                    "line {}: paid must be 0 or 1, found {other:?}",
                    lineno + 1
                )));
            }
        };
        rows.push((category.to_string(), paid));
    }
    Ok(rows)
}

/// Writes rows readable by [`read_playstore_csv`]. Category names may not
/// contain commas, quotes, or newlines.
pub fn write_playstore_csv(path: impl AsRef<Path>, rows: &[(String, bool)]) -> Result<()> {
    let mut text = String::from("category,paid\n");
    for (category, paid) in rows {
        if category.contains([',', '"', '\n']) {
            return Err(Error::Input(format!(
                "category {category:?} cannot be written as plain csv"
            )));
        }
        text.push_str(category);
        text.push(',');
        text.push(if *paid { '1' } else { '0' });
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
