// SPDX-License-Identifier: MIT OR Apache-2.0

//! Rank correlation, percentile bootstrap and permutation tests.
//!
//! Replicate `r` of every resampling procedure draws from its own stream
//! `seed.index(r)`, so replicates can run in parallel and the result is
//! identical for any thread count.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{below, SeedPath};

/// Mid-ranks (1-based); tied values share the mean of their rank span.
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; zero variance in either input is an error.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn check_sample(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!("spearman needs at least 3 pairs, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in correlation input".into()));
    }
    Ok(())
}

/// Spearman's rho: Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_sample(x, y)?;
    pearson(&rank_average(x), &rank_average(y))
}

/// Two-sided permutation p-value for Spearman's rho, shuffling `y` against
/// `x`: `(1 + #{|rho_perm| >= |rho_obs|}) / (1 + n_perm)`.
pub fn spearman_permutation_p(x: &[f64], y: &[f64], n_perm: usize, seed: SeedPath) -> Result<f64> {
    check_sample(x, y)?;
    if n_perm < 1 {
        return Err(Error::InvalidArgument("n_perm must be at least 1".into()));
    }
    let rx = rank_average(x);
    let ry = rank_average(y);
    let observed = pearson(&rx, &ry)?.abs();
    let tol = 1e-12 * (1.0 + observed);
    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed.index(r as u64).rng();
            let mut shuffled = ry.clone();
            shuffled.shuffle(&mut rng);
            usize::from(pearson(&rx, &shuffled).map(f64::abs).unwrap_or(0.0) >= observed - tol)
        })
        .sum();
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 10_000,
            level: 0.95,
        }
    }
}

/// Percentile confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ci {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Statistic was constant over every resample.
    pub degenerate: bool,
    /// Resamples on which the statistic was undefined (non-finite).
    pub n_invalid: usize,
}

impl Ci {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over `n` paired rows. `statistic` receives the
/// resampled row indices.
pub fn bootstrap_ci<F>(n: usize, statistic: F, cfg: &BootstrapConfig, seed: SeedPath) -> Result<Ci>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if n < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 samples, got {n}")));
    }
    if cfg.replicates < 1 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replicate".into()));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence level {} outside (0, 1)", cfg.level)));
    }
    let stats: Vec<f64> = (0..cfg.replicates)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |idx, r| {
                let mut rng = seed.index(r as u64).rng();
                idx.clear();
                idx.extend((0..n).map(|_| below(&mut rng, n)));
                statistic(idx)
            },
        )
        .collect();
    let mut valid: Vec<f64> = stats.into_iter().filter(|s| s.is_finite()).collect();
    let n_invalid = cfg.replicates - valid.len();
    if valid.is_empty() {
        return Err(Error::InvalidArgument("statistic undefined on every resample".into()));
    }
    valid.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let alpha = 1.0 - cfg.level;
    let lower = quantile_sorted(&valid, alpha / 2.0);
    let upper = quantile_sorted(&valid, 1.0 - alpha / 2.0);
    let degenerate = valid.first() == valid.last();
    if degenerate {
        log::debug!("bootstrap statistic constant over {} resamples", valid.len());
    }
    Ok(Ci {
        lower,
        upper,
        level: cfg.level,
        degenerate,
        n_invalid,
    })
}

/// Bootstrap CI of the mean of `values`. A single value yields a
/// zero-width, degenerate interval.
pub fn bootstrap_mean_ci(values: &[f64], cfg: &BootstrapConfig, seed: SeedPath) -> Result<Ci> {
    match values.len() {
        0 => Err(Error::InvalidArgument("no values to bootstrap".into())),
        1 => Ok(Ci {
            lower: values[0],
            upper: values[0],
            level: cfg.level,
            degenerate: true,
            n_invalid: 0,
        }),
        n => bootstrap_ci(
            n,
            |idx| idx.iter().map(|&i| values[i]).sum::<f64>() / n as f64,
            cfg,
            seed,
        ),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Orders two groups canonically so the test is exactly symmetric in its
/// arguments.
fn canonical<'a>(a: &'a [f64], b: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    let ord = a.len().cmp(&b.len()).then_with(|| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Two-sided permutation test on the difference of means:
/// `p = (1 + #{|T_perm| >= |T_obs|}) / (1 + n_perm)` over random
/// reassignments of the pooled values to the two groups.
pub fn permutation_test(group_a: &[f64], group_b: &[f64], n_perm: usize, seed: SeedPath) -> Result<f64> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::InvalidArgument("permutation test needs two nonempty groups".into()));
    }
    if n_perm < 1 {
        return Err(Error::InvalidArgument("n_perm must be at least 1".into()));
    }
    if group_a.iter().chain(group_b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in permutation test".into()));
    }
    let (a, b) = canonical(group_a, group_b);
    let na = a.len();
    let nb = b.len() as f64;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let total: f64 = pooled.iter().sum();
    let observed = (mean(a) - mean(b)).abs();
    let tol = 1e-9 * (1.0 + observed);
    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map_init(
            || pooled.clone(),
            |buf, r| {
                let mut rng = seed.index(r as u64).rng();
                buf.copy_from_slice(&pooled);
                let (first, _) = buf.partial_shuffle(&mut rng, na);
                let sa: f64 = first.iter().sum();
                let t = sa / na as f64 - (total - sa) / nb;
                usize::from(t.abs() >= observed - tol)
            },
        )
        .sum();
    Ok((1 + hits) as f64 / (1 + n_perm) as f64)
}
