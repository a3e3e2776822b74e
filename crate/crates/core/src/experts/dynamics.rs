// SPDX-License-Identifier: MIT OR Apache-2.0

//! Expert sets over training checkpoints and model sizes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{jaccard, ExpertSet, SelectionRule};
use crate::corpus::csv_string;
use crate::error::{Error, Result};
use crate::metrics::{bootstrap_mean_ci, BootstrapConfig, Ci};
use crate::rng::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStep {
    pub concept: String,
    pub from: String,
    pub to: String,
    pub jaccard: f64,
}

/// Jaccard between consecutive checkpoints of one concept, in the given
/// order.
pub fn checkpoint_overlap(sets: &[ExpertSet]) -> Result<Vec<CheckpointStep>> {
    let Some(first) = sets.first() else {
        return Err(Error::InvalidArgument("checkpoint overlap needs at least two checkpoints".into()));
    };
    if sets.len() < 2 {
        return Err(Error::InvalidArgument("checkpoint overlap needs at least two checkpoints".into()));
    }
    if let Some(s) = sets.iter().find(|s| s.concept != first.concept || s.rule != first.rule) {
        return Err(Error::Inconsistent(format!(
            "checkpoint series mixes {} ({}) with {} ({})",
            first.concept, first.rule, s.concept, s.rule
        )));
    }
    sets.windows(2)
        .map(|w| {
            Ok(CheckpointStep {
                concept: first.concept.clone(),
                from: w[0].checkpoint.clone(),
                to: w[1].checkpoint.clone(),
                jaccard: jaccard(&w[0], &w[1])?,
            })
        })
        .collect()
}

/// Set-size aggregate for one (model, checkpoint, rule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetSizeRow {
    pub model: String,
    pub checkpoint: String,
    pub rule: SelectionRule,
    pub n_neurons: u64,
    pub n_sets: usize,
    /// Sets of size zero; excluded from the log means.
    pub n_empty: usize,
    pub mean_log10_size: Option<f64>,
    pub log10_size_ci: Option<Ci>,
    /// Mean of log10(size / n_neurons).
    pub mean_log10_scaled: Option<f64>,
    pub log10_scaled_ci: Option<Ci>,
    /// Mean of size / n_neurons over all sets, empty ones included.
    pub mean_scaled_fraction: f64,
}

/// Mean log10 expert-set size with bootstrap CIs, raw and scaled by the
/// model's neuron count, per (model, checkpoint, rule).
pub fn set_size_stats(
    sets: &[(String, ExpertSet)],
    neuron_counts: &BTreeMap<String, u64>,
    boot: &BootstrapConfig,
    seed: SeedPath,
) -> Result<Vec<SetSizeRow>> {
    if sets.is_empty() {
        return Err(Error::InvalidArgument("no expert sets to summarise".into()));
    }
    let mut groups: BTreeMap<(String, String, String), (SelectionRule, Vec<usize>)> = BTreeMap::new();
    for (model, s) in sets {
        groups
            .entry((model.clone(), s.checkpoint.clone(), s.rule.to_string()))
            .or_insert_with(|| (s.rule, Vec::new()))
            .1
            .push(s.len());
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((model, checkpoint, rule_key), (rule, sizes)) in groups {
        let &n_neurons = neuron_counts
            .get(&model)
            .ok_or_else(|| Error::InvalidArgument(format!("no neuron count for model {model:?}")))?;
        if n_neurons == 0 {
            return Err(Error::InvalidArgument(format!("model {model:?} has zero neurons")));
        }
        let n_empty = sizes.iter().filter(|&&s| s == 0).count();
        let logs: Vec<f64> = sizes.iter().filter(|&&s| s > 0).map(|&s| (s as f64).log10()).collect();
        let scale = (n_neurons as f64).log10();
        let scaled: Vec<f64> = logs.iter().map(|l| l - scale).collect();
        let group_seed = seed.child(&model).child(&checkpoint).child(&rule_key);
        let summarise = |v: &[f64], label: &str| -> Result<(Option<f64>, Option<Ci>)> {
            if v.is_empty() {
                return Ok((None, None));
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            Ok((Some(mean), Some(bootstrap_mean_ci(v, boot, group_seed.child(label))?)))
        };
        let (mean_log10_size, log10_size_ci) = summarise(&logs, "raw")?;
        let (mean_log10_scaled, log10_scaled_ci) = summarise(&scaled, "scaled")?;
        let mean_scaled_fraction =
            sizes.iter().map(|&s| s as f64 / n_neurons as f64).sum::<f64>() / sizes.len() as f64;
        if n_empty > 0 {
            log::info!("{model}/{checkpoint}/{rule}: {n_empty} of {} sets empty", sizes.len());
        }
        rows.push(SetSizeRow {
            model,
            checkpoint,
            rule,
            n_neurons,
            n_sets: sizes.len(),
            n_empty,
            mean_log10_size,
            log10_size_ci,
            mean_log10_scaled,
            log10_scaled_ci,
            mean_scaled_fraction,
        });
    }
    Ok(rows)
}

pub fn set_size_csv(rows: &[SetSizeRow]) -> Result<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    csv_string(
        "set size csv",
        &[
            "model", "checkpoint", "rule", "n_sets", "n_empty", "log10_size", "ci_lo", "ci_hi", "log10_scaled",
            "scaled_ci_lo", "scaled_ci_hi", "scaled_fraction",
        ],
        rows.iter().map(|r| {
            vec![
                r.model.clone(),
                r.checkpoint.clone(),
                r.rule.to_string(),
                r.n_sets.to_string(),
                r.n_empty.to_string(),
                opt(r.mean_log10_size),
                opt(r.log10_size_ci.map(|c| c.lower)),
                opt(r.log10_size_ci.map(|c| c.upper)),
                opt(r.mean_log10_scaled),
                opt(r.log10_scaled_ci.map(|c| c.lower)),
                opt(r.log10_scaled_ci.map(|c| c.upper)),
                r.mean_scaled_fraction.to_string(),
            ]
        }),
    )
}

/// Least-squares slope of log10 set size against tau.
pub fn size_tau_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}
