// SPDX-License-Identifier: MIT OR Apache-2.0

//! Human word-pair similarity tables: continuous (MEN-style) scores and
//! three-level relatedness bins (SPP-style).

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinal relatedness level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SimilarityBin {
    Unrelated,
    Weak,
    Strong,
}

impl SimilarityBin {
    pub const ALL: [SimilarityBin; 3] = [SimilarityBin::Unrelated, SimilarityBin::Weak, SimilarityBin::Strong];

    pub fn rank(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for SimilarityBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityBin::Unrelated => "UNRELATED",
            SimilarityBin::Weak => "WEAK",
            SimilarityBin::Strong => "STRONG",
        })
    }
}

impl FromStr for SimilarityBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "unrelated" | "none" | "0" => Ok(SimilarityBin::Unrelated),
            "weak" | "somewhat" | "1" => Ok(SimilarityBin::Weak),
            "strong" | "2" => Ok(SimilarityBin::Strong),
            other => Err(Error::InvalidTable(format!("unknown similarity bin {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum HumanScore {
    Continuous(f64),
    Ordinal(SimilarityBin),
}

impl HumanScore {
    /// Numeric value for rank statistics; bins map to 0, 1, 2.
    pub fn value(self) -> f64 {
        match self {
            HumanScore::Continuous(v) => v,
            HumanScore::Ordinal(b) => f64::from(b.rank()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanPair {
    pub a: String,
    pub b: String,
    pub score: HumanScore,
}

/// Canonical unordered key for a word pair.
pub fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_owned(), b.to_owned())
    } else {
        (b.to_owned(), a.to_owned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSimilarityTable {
    pub name: String,
    pub pairs: Vec<HumanPair>,
}

impl HumanSimilarityTable {
    pub fn new(name: impl Into<String>, pairs: Vec<HumanPair>) -> Result<Self> {
        let table = HumanSimilarityTable {
            name: name.into(),
            pairs,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let continuous = self
            .pairs
            .first()
            .is_some_and(|p| matches!(p.score, HumanScore::Continuous(_)));
        for p in &self.pairs {
            if p.a == p.b {
                return Err(Error::InvalidTable(format!("self pair {:?}", p.a)));
            }
            if !seen.insert(pair_key(&p.a, &p.b)) {
                return Err(Error::InvalidTable(format!("duplicate pair ({}, {})", p.a, p.b)));
            }
            match p.score {
                HumanScore::Continuous(v) if !v.is_finite() => {
                    return Err(Error::InvalidTable(format!("non-finite score for ({}, {})", p.a, p.b)))
                }
                HumanScore::Continuous(_) if !continuous => {
                    return Err(Error::InvalidTable("mixed continuous and ordinal scores".into()))
                }
                HumanScore::Ordinal(_) if continuous => {
                    return Err(Error::InvalidTable("mixed continuous and ordinal scores".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Every word mentioned in the table, sorted and deduplicated.
    pub fn words(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .pairs
            .iter()
            .flat_map(|p| [p.a.clone(), p.b.clone()])
            .collect();
        words.sort();
        words.dedup();
        words
    }

    /// Parses `wordA<TAB>wordB<TAB>score` rows. Lines starting with `#` are
    /// comments; a first row whose third field is not a score is a header.
    pub fn parse_tsv(name: &str, text: &str, ordinal: bool) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut pairs = Vec::new();
        for (row, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Table {
                context: name.to_owned(),
                message: e.to_string(),
            })?;
            if record.len() < 3 {
                return Err(Error::InvalidTable(format!("{name}: row {} has {} fields", row + 1, record.len())));
            }
            let (a, b, raw) = (record[0].trim(), record[1].trim(), record[2].trim());
            let score = if ordinal {
                raw.parse().map(HumanScore::Ordinal)
            } else {
                raw.parse::<f64>()
                    .map(HumanScore::Continuous)
                    .map_err(|e| Error::InvalidTable(format!("{name}: row {}: {e}", row + 1)))
            };
            match score {
                Ok(score) => pairs.push(HumanPair {
                    a: a.to_owned(),
                    b: b.to_owned(),
                    score,
                }),
                Err(_) if row == 0 => continue,
                Err(e) => return Err(e),
            }
        }
        Self::new(name, pairs)
    }

    /// Reads `men.tsv`-style (continuous) or `spp.tsv`-style (ordinal) files.
    pub fn read_tsv(path: &Path, ordinal: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "human".into());
        Self::parse_tsv(&name, &text, ordinal)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            let score = match p.score {
                HumanScore::Continuous(v) => format!("{v}"),
                HumanScore::Ordinal(b) => b.to_string().to_ascii_lowercase(),
            };
            out.push_str(&format!("{}\t{}\t{}\n", p.a, p.b, score));
        }
        out
    }
}
