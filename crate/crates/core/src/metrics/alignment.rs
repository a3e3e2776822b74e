// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rank alignment between model-side concept similarity and human
//! similarity judgments.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::stats::{spearman, spearman_permutation_p, bootstrap_ci, BootstrapConfig, Ci};
use crate::corpus::csv_string;
use crate::corpus::human::{pair_key, HumanSimilarityTable};
use crate::error::{Error, Result};
use crate::rng::SeedPath;

/// How a model-side similarity value was computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimilarityMethod {
    Jaccard { tau: f64 },
    ApCosine,
    NegadjCosine,
    SymKl,
    EmbCosine { embedding: String },
}

impl fmt::Display for SimilarityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityMethod::Jaccard { tau } => write!(f, "jaccard@{tau:.2}"),
            SimilarityMethod::ApCosine => f.write_str("ap_cosine"),
            SimilarityMethod::NegadjCosine => f.write_str("negadj_cosine"),
            SimilarityMethod::SymKl => f.write_str("sym_kl"),
            SimilarityMethod::EmbCosine { embedding } => write!(f, "emb_cosine:{embedding}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub a: String,
    pub b: String,
    pub method: SimilarityMethod,
    pub value: f64,
    pub checkpoint: String,
    pub model: String,
}

/// What to do with human pairs that have no model-side record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPairPolicy {
    /// Drop them and list them in the report.
    #[default]
    Exclude,
    /// Fail the alignment.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentConfig {
    pub bootstrap: BootstrapConfig,
    pub permutations: usize,
    pub missing: MissingPairPolicy,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            bootstrap: BootstrapConfig::default(),
            permutations: 10_000,
            missing: MissingPairPolicy::Exclude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub model: String,
    pub checkpoint: String,
    pub method: SimilarityMethod,
    pub human_table: String,
    pub rho: f64,
    pub ci: Ci,
    pub n_pairs: usize,
    pub p_value: f64,
    /// Point estimate falls outside its own percentile interval.
    pub estimate_outside_ci: bool,
    pub missing_pairs: Vec<(String, String)>,
}

/// Spearman correlation between the `method` records and the human scores
/// over matched pairs, with a percentile bootstrap CI and a permutation
/// p-value. Records must come from a single (model, checkpoint).
pub fn align_with_humans(
    records: &[SimilarityRecord],
    human: &HumanSimilarityTable,
    method: &SimilarityMethod,
    cfg: &AlignmentConfig,
    seed: SeedPath,
) -> Result<AlignmentReport> {
    let selected: Vec<&SimilarityRecord> = records.iter().filter(|r| &r.method == method).collect();
    let Some(first) = selected.first() else {
        return Err(Error::InvalidArgument(format!("no similarity records for method {method}")));
    };
    if selected
        .iter()
        .any(|r| r.model != first.model || r.checkpoint != first.checkpoint)
    {
        return Err(Error::Inconsistent(
            "similarity records span several models or checkpoints".into(),
        ));
    }
    let mut by_pair: HashMap<(String, String), f64> = HashMap::with_capacity(selected.len());
    for r in &selected {
        if by_pair.insert(pair_key(&r.a, &r.b), r.value).is_some() {
            return Err(Error::Inconsistent(format!("duplicate similarity record ({}, {})", r.a, r.b)));
        }
    }

    let mut model_side = Vec::new();
    let mut human_side = Vec::new();
    let mut missing_pairs = Vec::new();
    for p in &human.pairs {
        match by_pair.get(&pair_key(&p.a, &p.b)) {
            Some(&v) => {
                model_side.push(v);
                human_side.push(p.score.value());
            }
            None => missing_pairs.push((p.a.clone(), p.b.clone())),
        }
    }
    if !missing_pairs.is_empty() {
        if cfg.missing == MissingPairPolicy::Error {
            return Err(Error::Inconsistent(format!(
                "{} human pairs have no {method} record",
                missing_pairs.len()
            )));
        }
        log::warn!("{} human pairs have no {method} record; excluded", missing_pairs.len());
    }
    let n_pairs = model_side.len();
    if n_pairs < 3 {
        return Err(Error::InvalidArgument(format!("alignment needs at least 3 matched pairs, got {n_pairs}")));
    }

    let rho = spearman(&model_side, &human_side)?;
    let ci = bootstrap_ci(
        n_pairs,
        |idx| {
            let x: Vec<f64> = idx.iter().map(|&i| model_side[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| human_side[i]).collect();
            spearman(&x, &y).unwrap_or(f64::NAN)
        },
        &cfg.bootstrap,
        seed.child("bootstrap"),
    )?;
    let p_value = spearman_permutation_p(&model_side, &human_side, cfg.permutations, seed.child("permutation"))?;
    let estimate_outside_ci = !ci.contains(rho);
    if estimate_outside_ci {
        log::warn!("{method}: rho {rho:.4} outside its bootstrap interval [{:.4}, {:.4}]", ci.lower, ci.upper);
    }
    Ok(AlignmentReport {
        model: first.model.clone(),
        checkpoint: first.checkpoint.clone(),
        method: method.clone(),
        human_table: human.name.clone(),
        rho,
        ci,
        n_pairs,
        p_value,
        estimate_outside_ci,
        missing_pairs,
    })
}

/// Plot-ready CSV: `model,checkpoint,method,rho,ci_lo,ci_hi,n,p`.
pub fn alignment_csv(reports: &[AlignmentReport]) -> Result<String> {
    csv_string(
        "alignment csv",
        &["model", "checkpoint", "method", "rho", "ci_lo", "ci_hi", "n", "p"],
        reports.iter().map(|r| {
            vec![
                r.model.clone(),
                r.checkpoint.clone(),
                r.method.to_string(),
                r.rho.to_string(),
                r.ci.lower.to_string(),
                r.ci.upper.to_string(),
                r.n_pairs.to_string(),
                r.p_value.to_string(),
            ]
        }),
    )
}
