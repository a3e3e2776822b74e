// SPDX-License-Identifier: MIT OR Apache-2.0

//! Expert sets: extraction by AP threshold or rank, overlap, fold
//! stability and training dynamics.

pub mod dynamics;
pub mod sets;
pub mod stability;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ap::ApVector;
use crate::corpus::hex_u64;
use crate::error::{Error, Result};

pub use dynamics::{checkpoint_overlap, set_size_stats, size_tau_slope, CheckpointStep, SetSizeRow};
pub use stability::{fold_stability, FoldConfig, StabilityReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectionRule {
    /// Every neuron with AP >= tau.
    Threshold { tau: f64 },
    /// The k highest-AP neurons, ties by ascending flat id.
    TopK { k: usize },
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::Threshold { tau } => write!(f, "tau={tau:.2}"),
            SelectionRule::TopK { k } => write!(f, "top{k}"),
        }
    }
}

/// Sorted flat neuron ids selected from one AP vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSet {
    pub concept: String,
    pub checkpoint: String,
    pub rule: SelectionRule,
    pub ids: Vec<u64>,
    #[serde(with = "hex_u64")]
    pub map_hash: u64,
}

impl ExpertSet {
    pub fn new(
        concept: impl Into<String>,
        checkpoint: impl Into<String>,
        rule: SelectionRule,
        ids: Vec<u64>,
        map_hash: u64,
    ) -> Result<Self> {
        if !sets::is_strictly_increasing(&ids) {
            return Err(Error::InvalidArgument("expert ids must be strictly increasing".into()));
        }
        Ok(ExpertSet {
            concept: concept.into(),
            checkpoint: checkpoint.into(),
            rule,
            ids,
            map_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.binary_search(&id).is_ok()
    }

    pub fn tau(&self) -> Option<f64> {
        match self.rule {
            SelectionRule::Threshold { tau } => Some(tau),
            SelectionRule::TopK { .. } => None,
        }
    }
}

/// All neurons with AP >= `tau` (inclusive).
pub fn extract_experts(ap: &ApVector, tau: f64) -> Result<ExpertSet> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")));
    }
    let ids = ap
        .scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| f64::from(s) >= tau)
        .map(|(i, _)| i as u64)
        .collect();
    ExpertSet::new(
        ap.concept.clone(),
        ap.checkpoint.clone(),
        SelectionRule::Threshold { tau },
        ids,
        ap.map_hash(),
    )
}

/// Flat ids of the `k` best neurons in rank order (AP descending, id
/// ascending). `k` larger than the vector is clamped.
pub fn top_k_ranked(ap: &ApVector, k: usize) -> Result<Vec<u64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = ap.len();
    if k > n {
        log::warn!("top-k: k = {k} exceeds {n} neurons; clamping");
    }
    let k = k.min(n);
    let by_rank = |a: &u64, b: &u64| {
        let (sa, sb) = (ap.scores[*a as usize], ap.scores[*b as usize]);
        sb.partial_cmp(&sa).expect("AP is finite").then(a.cmp(b))
    };
    let mut order: Vec<u64> = (0..n as u64).collect();
    if k < n {
        order.select_nth_unstable_by(k - 1, by_rank);
        order.truncate(k);
    }
    order.sort_unstable_by(by_rank);
    Ok(order)
}

pub fn top_k_experts(ap: &ApVector, k: usize) -> Result<ExpertSet> {
    let mut ids = top_k_ranked(ap, k)?;
    ids.sort_unstable();
    ExpertSet::new(
        ap.concept.clone(),
        ap.checkpoint.clone(),
        SelectionRule::TopK { k },
        ids,
        ap.map_hash(),
    )
}

/// Jaccard overlap of two expert sets over the same neuron map.
pub fn jaccard(a: &ExpertSet, b: &ExpertSet) -> Result<f64> {
    if a.map_hash != b.map_hash {
        return Err(Error::MapMismatch(format!(
            "{} ({:016x}) vs {} ({:016x})",
            a.concept, a.map_hash, b.concept, b.map_hash
        )));
    }
    Ok(sets::jaccard_ids(&a.ids, &b.ids))
}

/// Pairwise Jaccard matrix over `sets`, unit diagonal.
pub fn pairwise_jaccard(sets: &[ExpertSet]) -> Result<Vec<Vec<f64>>> {
    let n = sets.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in i + 1..n {
            let v = jaccard(&sets[i], &sets[j])?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}
