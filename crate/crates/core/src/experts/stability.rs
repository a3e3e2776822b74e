// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fold stability: re-extract experts on independent subsamples and compare
//! overlap within a concept against overlap across concepts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sets::jaccard_ids;
use crate::ap::score_rows;
use crate::corpus::{build_negative_set, csv_string, ActivationDump, ConceptManifest, SentenceId};
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_mean_ci, BootstrapConfig, Ci};
use crate::rng::{sample_indices, SeedPath};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldConfig {
    pub pos_size: usize,
    pub neg_size: usize,
    pub folds: usize,
    pub taus: Vec<f64>,
    /// Random concept pairs averaged for the cross-concept baseline.
    pub cross_pairs: usize,
    pub bootstrap: BootstrapConfig,
}

impl Default for FoldConfig {
    fn default() -> Self {
        FoldConfig {
            pos_size: 400,
            neg_size: 1000,
            folds: 8,
            taus: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            cross_pairs: 50,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

/// Aggregate over concepts at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub tau: f64,
    pub within: f64,
    pub within_ci: Ci,
    pub cross: Option<f64>,
    pub cross_ci: Option<Ci>,
    pub n_concepts: usize,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStability {
    pub concept: String,
    pub tau: f64,
    pub within: f64,
    pub mean_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub pos_size: usize,
    pub neg_size: usize,
    pub folds: usize,
    pub points: Vec<StabilityPoint>,
    pub concepts: Vec<ConceptStability>,
    pub cross_pairs: Vec<(String, String)>,
}

/// One row per (configuration, tau).
pub fn stability_csv(reports: &[StabilityReport]) -> Result<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    csv_string(
        "stability csv",
        &[
            "pos_size", "neg_size", "folds", "tau", "within", "within_lo", "within_hi", "cross", "cross_lo", "cross_hi",
        ],
        reports.iter().flat_map(|r| {
            r.points.iter().map(move |p| {
                vec![
                    r.pos_size.to_string(),
                    r.neg_size.to_string(),
                    r.folds.to_string(),
                    p.tau.to_string(),
                    p.within.to_string(),
                    p.within_ci.lower.to_string(),
                    p.within_ci.upper.to_string(),
                    opt(p.cross),
                    opt(p.cross_ci.map(|c| c.lower)),
                    opt(p.cross_ci.map(|c| c.upper)),
                ]
            })
        }),
    )
}

fn validate(cfg: &FoldConfig, n_concepts: usize) -> Result<()> {
    if cfg.folds < 2 {
        return Err(Error::InvalidArgument(format!("fold stability needs K >= 2, got {}", cfg.folds)));
    }
    if cfg.pos_size == 0 || cfg.neg_size == 0 {
        return Err(Error::InvalidArgument("fold sample sizes must be positive".into()));
    }
    if cfg.taus.is_empty() || cfg.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::InvalidArgument("tau grid must be nonempty and inside (0, 1)".into()));
    }
    if n_concepts < 2 {
        return Err(Error::InvalidArgument("fold stability needs at least two concepts".into()));
    }
    Ok(())
}

/// Expert ids per tau for one (concept, fold) subsample.
fn fold_experts(
    dump: &ActivationDump,
    target: &ConceptManifest,
    negative_pool: &[ConceptManifest],
    cfg: &FoldConfig,
    seed: SeedPath,
) -> Result<Vec<Vec<u64>>> {
    let positives = target.positives();
    if positives.len() < cfg.pos_size {
        return Err(Error::InsufficientPool {
            needed: cfg.pos_size,
            available: positives.len(),
        });
    }
    let mut rng = seed.child("pos").rng();
    let pos: Vec<SentenceId> = sample_indices(&mut rng, positives.len(), cfg.pos_size)
        .into_iter()
        .map(|i| positives[i])
        .collect();
    let others: Vec<ConceptManifest> = negative_pool
        .iter()
        .filter(|m| m.concept != target.concept)
        .cloned()
        .collect();
    let neg = build_negative_set(&others, target, cfg.neg_size, seed.child("neg"))?;

    let mut rows = dump.rows_for(&pos)?;
    rows.extend(dump.rows_for(&neg)?);
    let mut labels = vec![true; pos.len()];
    labels.resize(rows.len(), false);
    let scores = score_rows(dump, &rows, &labels)?;
    Ok(cfg
        .taus
        .iter()
        .map(|&tau| {
            scores
                .iter()
                .enumerate()
                .filter(|(_, &s)| f64::from(s) >= tau)
                .map(|(i, _)| i as u64)
                .collect()
        })
        .collect())
}

/// Within-concept overlap (mean Jaccard over all fold pairs) against
/// cross-concept overlap (mean Jaccard at matched folds over random concept
/// pairs), per threshold. Negatives for a concept are drawn from the
/// positives of every other concept in `negative_pool`; passing `manifests`
/// again uses the studied concepts themselves.
pub fn fold_stability(
    dump: &ActivationDump,
    manifests: &[ConceptManifest],
    negative_pool: &[ConceptManifest],
    cfg: &FoldConfig,
    seed: SeedPath,
) -> Result<StabilityReport> {
    validate(cfg, manifests.len())?;
    let k = cfg.folds;
    let n_tau = cfg.taus.len();

    // sets[c][f][t]
    let mut sets: Vec<Vec<Vec<Vec<u64>>>> = Vec::with_capacity(manifests.len());
    for m in manifests {
        let concept_seed = seed.child("fold").child(&m.concept);
        let folds = (0..k)
            .map(|f| fold_experts(dump, m, negative_pool, cfg, concept_seed.index(f as u64)))
            .collect::<Result<Vec<_>>>()?;
        log::debug!("fold stability: {} scored over {k} folds", m.concept);
        sets.push(folds);
    }

    let fold_pairs: Vec<(usize, usize)> = (0..k).flat_map(|a| (a + 1..k).map(move |b| (a, b))).collect();
    let mut concepts = Vec::with_capacity(manifests.len() * n_tau);
    let mut within: Vec<Vec<f64>> = vec![Vec::with_capacity(manifests.len()); n_tau];
    for (c, m) in manifests.iter().enumerate() {
        for (t, &tau) in cfg.taus.iter().enumerate() {
            let w = fold_pairs
                .iter()
                .map(|&(a, b)| jaccard_ids(&sets[c][a][t], &sets[c][b][t]))
                .sum::<f64>()
                / fold_pairs.len() as f64;
            let mean_size = sets[c].iter().map(|f| f[t].len() as f64).sum::<f64>() / k as f64;
            within[t].push(w);
            concepts.push(ConceptStability {
                concept: m.concept.clone(),
                tau,
                within: w,
                mean_size,
            });
        }
    }

    let all_pairs: Vec<(usize, usize)> = (0..manifests.len())
        .flat_map(|a| (a + 1..manifests.len()).map(move |b| (a, b)))
        .collect();
    let n_cross = cfg.cross_pairs.min(all_pairs.len());
    let mut rng = seed.child("cross-pairs").rng();
    let chosen: Vec<(usize, usize)> = sample_indices(&mut rng, all_pairs.len(), n_cross)
        .into_iter()
        .map(|i| all_pairs[i])
        .collect();
    let cross: Vec<Vec<f64>> = (0..n_tau)
        .map(|t| {
            chosen
                .iter()
                .map(|&(a, b)| (0..k).map(|f| jaccard_ids(&sets[a][f][t], &sets[b][f][t])).sum::<f64>() / k as f64)
                .collect()
        })
        .collect();

    let points = cfg
        .taus
        .par_iter()
        .enumerate()
        .map(|(t, &tau)| {
            let tau_seed = seed.child("bootstrap").index(t as u64);
            let w = &within[t];
            let within_mean = w.iter().sum::<f64>() / w.len() as f64;
            let within_ci = bootstrap_mean_ci(w, &cfg.bootstrap, tau_seed.child("within"))?;
            let (cross_mean, cross_ci) = if cross[t].is_empty() {
                (None, None)
            } else {
                let x = &cross[t];
                (
                    Some(x.iter().sum::<f64>() / x.len() as f64),
                    Some(bootstrap_mean_ci(x, &cfg.bootstrap, tau_seed.child("cross"))?),
                )
            };
            Ok(StabilityPoint {
                tau,
                within: within_mean,
                within_ci,
                cross: cross_mean,
                cross_ci,
                n_concepts: w.len(),
                n_pairs: cross[t].len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(StabilityReport {
        pos_size: cfg.pos_size,
        neg_size: cfg.neg_size,
        folds: k,
        points,
        concepts,
        cross_pairs: chosen
            .iter()
            .map(|&(a, b)| (manifests[a].concept.clone(), manifests[b].concept.clone()))
            .collect(),
    })
}
