// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sliding-difference (backward-difference) contrast coding and the
//! adjacent-level group comparison built on it.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_mean_ci, permutation_test, BootstrapConfig, Ci};
use crate::error::{Error, Result};
use crate::rng::SeedPath;

/// `L x (L-1)` coding matrix; column `j` contrasts level `j+1` with level `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastMatrix {
    pub levels: Vec<String>,
    /// Row-major, one row per level.
    pub rows: Vec<Vec<f64>>,
}

pub fn sliding_difference_contrasts<S: AsRef<str>>(levels: &[S]) -> Result<ContrastMatrix> {
    let l = levels.len();
    if l < 2 {
        return Err(Error::InvalidArgument(format!("contrast coding needs at least 2 levels, got {l}")));
    }
    let mut seen = HashSet::new();
    for level in levels {
        if !seen.insert(level.as_ref()) {
            return Err(Error::InvalidArgument(format!("duplicate level {:?}", level.as_ref())));
        }
    }
    let lf = l as f64;
    let rows = (0..l)
        .map(|i| {
            (0..l - 1)
                .map(|j| if i <= j { (j + 1) as f64 / lf - 1.0 } else { (j + 1) as f64 / lf })
                .collect()
        })
        .collect();
    Ok(ContrastMatrix {
        levels: levels.iter().map(|s| s.as_ref().to_owned()).collect(),
        rows,
    })
}

impl ContrastMatrix {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Coefficients of the cell-means model `mean = b0 + C b`, solved
    /// exactly; with sliding-difference coding `b_j` is the difference
    /// between the means of levels `j+1` and `j`.
    pub fn estimates(&self, group_means: &[f64]) -> Result<Vec<f64>> {
        let l = self.n_levels();
        if group_means.len() != l {
            return Err(Error::LengthMismatch {
                left: group_means.len(),
                right: l,
            });
        }
        let design = DMatrix::from_fn(l, l, |i, j| if j == 0 { 1.0 } else { self.rows[i][j - 1] });
        let beta = design
            .lu()
            .solve(&DVector::from_column_slice(group_means))
            .ok_or_else(|| Error::InvalidArgument("singular contrast design".into()))?;
        Ok(beta.iter().skip(1).copied().collect())
    }
}

/// One adjacent-level comparison, e.g. WEAK vs UNRELATED.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelContrast {
    pub from: String,
    pub to: String,
    /// Contrast coefficient: mean(to) - mean(from).
    pub estimate: f64,
    pub p_value: f64,
    pub n_from: usize,
    pub n_to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: String,
    pub n: usize,
    pub mean: f64,
    pub ci: Option<Ci>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub contrasts: ContrastMatrix,
    pub levels: Vec<LevelSummary>,
    pub comparisons: Vec<LevelContrast>,
}

/// Group means with bootstrap CIs, sliding-difference estimates and a
/// permutation p-value for each adjacent pair of ordered levels.
pub fn compare_adjacent_levels(
    groups: &[(String, Vec<f64>)],
    bootstrap: &BootstrapConfig,
    n_perm: usize,
    seed: SeedPath,
) -> Result<LevelComparison> {
    let names: Vec<&str> = groups.iter().map(|(n, _)| n.as_str()).collect();
    let contrasts = sliding_difference_contrasts(&names)?;
    if let Some((name, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::InvalidArgument(format!("level {name:?} has no observations")));
    }
    let means: Vec<f64> = groups.iter().map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64).collect();
    let estimates = contrasts.estimates(&means)?;
    let levels = groups
        .iter()
        .zip(&means)
        .enumerate()
        .map(|(i, ((name, v), &mean))| {
            Ok(LevelSummary {
                level: name.clone(),
                n: v.len(),
                mean,
                ci: Some(bootstrap_mean_ci(v, bootstrap, seed.child("ci").index(i as u64))?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let comparisons = (0..groups.len() - 1)
        .map(|j| {
            let (from, lo) = &groups[j];
            let (to, hi) = &groups[j + 1];
            Ok(LevelContrast {
                from: from.clone(),
                to: to.clone(),
                estimate: estimates[j],
                p_value: permutation_test(hi, lo, n_perm, seed.child("perm").index(j as u64))?,
                n_from: lo.len(),
                n_to: hi.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LevelComparison {
        contrasts,
        levels,
        comparisons,
    })
}
