// SPDX-License-Identifier: MIT OR Apache-2.0

//! Where experts sit in the network: per-block counts and densities, and AP
//! histograms of shared versus privileged experts.

use serde::{Deserialize, Serialize};

use crate::ap::ApVector;
use crate::corpus::{csv_string, NeuronMap, Sublayer};
use crate::error::{Error, Result};
use crate::experts::sets::intersection;
use crate::experts::{extract_experts, ExpertSet, SelectionRule};
use crate::metrics::permutation_test;
use crate::rng::SeedPath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBucket {
    pub layer: u16,
    pub sublayer: Sublayer,
    pub units: u32,
    pub count: u64,
    /// count / units.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDistribution {
    pub label: String,
    pub checkpoint: String,
    pub rule: SelectionRule,
    pub buckets: Vec<LayerBucket>,
    pub total: u64,
    /// Density-weighted mean layer index; `None` when no block has experts.
    pub mean_layer: Option<f64>,
}

fn check_map(set: &ExpertSet, map: &NeuronMap) -> Result<()> {
    if set.map_hash != map.layout_hash() {
        return Err(Error::MapMismatch(format!(
            "expert set {} ({:016x}) vs neuron map {:016x}",
            set.concept,
            set.map_hash,
            map.layout_hash()
        )));
    }
    if let Some(&last) = set.ids.last() {
        if last >= map.n_neurons() {
            return Err(Error::NeuronOutOfRange {
                id: last,
                n_neurons: map.n_neurons(),
            });
        }
    }
    Ok(())
}

/// Expert counts per (layer, sublayer) block, normalised by block size.
pub fn layer_distribution(set: &ExpertSet, map: &NeuronMap) -> Result<LayerDistribution> {
    check_map(set, map)?;
    let mut counts = vec![0u64; map.blocks().len()];
    for &id in &set.ids {
        counts[map.block_of(id).expect("id checked against map")] += 1;
    }
    let buckets: Vec<LayerBucket> = map
        .blocks()
        .iter()
        .zip(counts)
        .map(|(b, count)| LayerBucket {
            layer: b.layer,
            sublayer: b.sublayer,
            units: b.units,
            count,
            density: count as f64 / f64::from(b.units),
        })
        .collect();
    let mass: f64 = buckets.iter().map(|b| b.density).sum();
    let mean_layer =
        (mass > 0.0).then(|| buckets.iter().map(|b| f64::from(b.layer) * b.density).sum::<f64>() / mass);
    Ok(LayerDistribution {
        label: set.concept.clone(),
        checkpoint: set.checkpoint.clone(),
        rule: set.rule,
        total: set.len() as u64,
        buckets,
        mean_layer,
    })
}

/// Pools several distributions over the same map: counts are summed and
/// densities become mean densities per set.
pub fn aggregate_distributions(label: &str, dists: &[LayerDistribution]) -> Result<LayerDistribution> {
    let Some(first) = dists.first() else {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    };
    let n = dists.len() as f64;
    let mut buckets = first.buckets.clone();
    for d in &dists[1..] {
        if d.buckets.len() != buckets.len() || d.rule != first.rule || d.checkpoint != first.checkpoint {
            return Err(Error::Inconsistent(format!("cannot pool {} with {}", first.label, d.label)));
        }
        for (acc, b) in buckets.iter_mut().zip(&d.buckets) {
            acc.count += b.count;
        }
    }
    for b in &mut buckets {
        b.density = b.count as f64 / (f64::from(b.units) * n);
    }
    let mass: f64 = buckets.iter().map(|b| b.density).sum();
    let mean_layer =
        (mass > 0.0).then(|| buckets.iter().map(|b| f64::from(b.layer) * b.density).sum::<f64>() / mass);
    Ok(LayerDistribution {
        label: label.to_string(),
        checkpoint: first.checkpoint.clone(),
        rule: first.rule,
        total: buckets.iter().map(|b| b.count).sum(),
        buckets,
        mean_layer,
    })
}

/// Plot-ready rows: `label,checkpoint,rule,layer,sublayer,units,count,density`.
pub fn layer_csv(dists: &[LayerDistribution]) -> Result<String> {
    csv_string(
        "layer csv",
        &["label", "checkpoint", "rule", "layer", "sublayer", "units", "count", "density"],
        dists.iter().flat_map(|d| {
            d.buckets.iter().map(move |b| {
                vec![
                    d.label.clone(),
                    d.checkpoint.clone(),
                    d.rule.to_string(),
                    b.layer.to_string(),
                    b.sublayer.to_string(),
                    b.units.to_string(),
                    b.count.to_string(),
                    b.density.to_string(),
                ]
            })
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockComparison {
    pub layer: u16,
    pub sublayer: Sublayer,
    pub mean_a: f64,
    pub mean_b: f64,
    pub p_value: f64,
}

/// Per-block two-sided permutation test of expert density between two
/// groups of concepts (for example broader against specific concepts).
pub fn compare_layer_densities(
    group_a: &[ExpertSet],
    group_b: &[ExpertSet],
    map: &NeuronMap,
    n_perm: usize,
    seed: SeedPath,
) -> Result<Vec<BlockComparison>> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::InvalidArgument("both concept groups must be nonempty".into()));
    }
    let densities = |g: &[ExpertSet]| -> Result<Vec<Vec<f64>>> {
        g.iter()
            .map(|s| Ok(layer_distribution(s, map)?.buckets.iter().map(|b| b.density).collect()))
            .collect()
    };
    let (da, db) = (densities(group_a)?, densities(group_b)?);
    map.blocks()
        .iter()
        .enumerate()
        .map(|(i, block)| {
            let a: Vec<f64> = da.iter().map(|d| d[i]).collect();
            let b: Vec<f64> = db.iter().map(|d| d[i]).collect();
            Ok(BlockComparison {
                layer: block.layer,
                sublayer: block.sublayer,
                mean_a: a.iter().sum::<f64>() / a.len() as f64,
                mean_b: b.iter().sum::<f64>() / b.len() as f64,
                p_value: permutation_test(&a, &b, n_perm, seed.index(i as u64))?,
            })
        })
        .collect()
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.01;

/// AP histograms of one concept's experts, split by whether the other
/// concept shares them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptHistograms {
    pub concept: String,
    pub n_experts: u64,
    pub shared: Vec<u64>,
    pub non_shared: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedHistograms {
    pub tau: f64,
    pub bin_width: f64,
    /// Left bin edges; the last bin is closed at 1.
    pub edges: Vec<f64>,
    pub n_shared: u64,
    pub a: ConceptHistograms,
    pub b: ConceptHistograms,
}

const EDGE_SLACK: f64 = 1e-5;

fn bin_count(tau: f64, width: f64) -> usize {
    (((1.0 - tau) / width) - 1e-9).ceil().max(1.0) as usize
}

fn histogram(ap: &ApVector, ids: &[u64], tau: f64, width: f64, n_bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; n_bins];
    for &id in ids {
        let v = f64::from(ap.scores[id as usize]);
        // values within f32 rounding of an edge belong to the upper bin
        let bin = (((v - tau) / width + EDGE_SLACK).floor().max(0.0) as usize).min(n_bins - 1);
        h[bin] += 1;
    }
    h
}

/// Histograms over [tau, 1] of the AP values of each concept's experts,
/// partitioned into shared and privileged.
pub fn ap_histograms_shared(a: &ApVector, b: &ApVector, tau: f64, bin_width: f64) -> Result<SharedHistograms> {
    if a.map_hash() != b.map_hash() {
        return Err(Error::MapMismatch(format!("{} vs {}", a.concept, b.concept)));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidArgument(format!("bin width {bin_width} must be positive")));
    }
    let (sa, sb) = (extract_experts(a, tau)?, extract_experts(b, tau)?);
    let shared = intersection(&sa.ids, &sb.ids);
    let n_bins = bin_count(tau, bin_width);
    let side = |ap: &ApVector, set: &ExpertSet| {
        let privileged: Vec<u64> = set.ids.iter().copied().filter(|id| shared.binary_search(id).is_err()).collect();
        ConceptHistograms {
            concept: ap.concept.clone(),
            n_experts: set.len() as u64,
            shared: histogram(ap, &shared, tau, bin_width, n_bins),
            non_shared: histogram(ap, &privileged, tau, bin_width, n_bins),
        }
    };
    Ok(SharedHistograms {
        tau,
        bin_width,
        edges: (0..n_bins).map(|i| tau + i as f64 * bin_width).collect(),
        n_shared: shared.len() as u64,
        a: side(a, &sa),
        b: side(b, &sb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{NeuronBlock, Pooling};
    use crate::rng::sample_indices;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn rule() -> SelectionRule {
        SelectionRule::Threshold { tau: 0.5 }
    }

    fn set_on(map: &NeuronMap, ids: Vec<u64>) -> ExpertSet {
        ExpertSet::new("c", "k", rule(), ids, map.layout_hash()).unwrap()
    }

    #[test]
    fn all_in_first_block() {
        let map = NeuronMap::uniform(4, 100, 50).unwrap();
        let d = layer_distribution(&set_on(&map, vec![0, 5, 99]), &map).unwrap();
        let nonzero: Vec<_> = d.buckets.iter().filter(|b| b.count > 0).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!((nonzero[0].layer, nonzero[0].sublayer, nonzero[0].count), (0, Sublayer::Mlp, 3));
        assert_eq!(d.mean_layer, Some(0.0));
        assert!((nonzero[0].density - 0.03).abs() < 1e-15);
    }

    #[test]
    fn empty_set_is_all_zero() {
        let map = NeuronMap::uniform(3, 10, 10).unwrap();
        let d = layer_distribution(&set_on(&map, vec![]), &map).unwrap();
        assert!(d.buckets.iter().all(|b| b.count == 0 && b.density == 0.0));
        assert_eq!((d.total, d.mean_layer), (0, None));
    }

    #[test]
    fn uniform_ids_give_flat_densities() {
        let map = NeuronMap::new(
            (0..6u16)
                .flat_map(|l| {
                    [
                        NeuronBlock { layer: l, sublayer: Sublayer::Mlp, units: 4000 + 500 * u32::from(l) },
                        NeuronBlock { layer: l, sublayer: Sublayer::Attn, units: 1000 },
                    ]
                })
                .collect(),
        )
        .unwrap();
        let n = map.n_neurons() as usize;
        let mut rng = SeedPath::root(8).rng();
        let ids: Vec<u64> = sample_indices(&mut rng, n, 10_000).into_iter().map(|i| i as u64).collect();
        let d = layer_distribution(&set_on(&map, ids), &map).unwrap();
        assert_eq!(d.buckets.iter().map(|b| b.count).sum::<u64>(), 10_000);
        for b in &d.buckets {
            // multinomial cell: mean n p, sd sqrt(n p (1 - p))
            let p = f64::from(b.units) / n as f64;
            let (mu, sd) = (10_000.0 * p, (10_000.0 * p * (1.0 - p)).sqrt());
            assert!((b.count as f64 - mu).abs() <= 3.0 * sd, "{b:?} mu {mu} sd {sd}");
        }
    }

    #[test]
    fn out_of_range_and_foreign_map() {
        let map = NeuronMap::uniform(1, 10, 0).unwrap();
        assert!(matches!(
            layer_distribution(&set_on(&map, vec![10]), &map),
            Err(Error::NeuronOutOfRange { id: 10, .. })
        ));
        let other = NeuronMap::uniform(1, 11, 0).unwrap();
        assert!(matches!(layer_distribution(&set_on(&other, vec![1]), &map), Err(Error::MapMismatch(_))));
    }

    #[test]
    fn aggregate_sums_counts() {
        let map = NeuronMap::uniform(2, 10, 5).unwrap();
        let a = layer_distribution(&set_on(&map, vec![0, 1, 20]), &map).unwrap();
        let b = layer_distribution(&set_on(&map, vec![2, 29]), &map).unwrap();
        let all = aggregate_distributions("ALL", &[a, b]).unwrap();
        assert_eq!(all.total, 5);
        assert_eq!(all.buckets[0].count, 3);
        assert!((all.buckets[0].density - 0.15).abs() < 1e-15);
        assert_eq!(all.buckets[3].count, 1);
        assert!(aggregate_distributions("ALL", &[]).is_err());
    }

    #[test]
    fn csv_rows_per_block() {
        let map = NeuronMap::uniform(2, 10, 5).unwrap();
        let d = layer_distribution(&set_on(&map, vec![0, 12]), &map).unwrap();
        let text = layer_csv(&[d]).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("c,k,tau=0.50,0,ATTN,5,1,0.2"));
        assert!(text.contains("c,k,tau=0.50,1,MLP,10,0,0"));
    }

    #[test]
    fn groups_with_different_density_are_separated() {
        let map = NeuronMap::uniform(2, 100, 100).unwrap();
        let group = |offset: u64| -> Vec<ExpertSet> {
            (0..20u64).map(|i| set_on(&map, (offset..offset + 10 + i % 3).collect())).collect()
        };
        let cmp = compare_layer_densities(&group(0), &group(300), &map, 999, SeedPath::root(1)).unwrap();
        assert_eq!(cmp.len(), 4);
        assert!(cmp[0].p_value <= 0.001 && cmp[3].p_value <= 0.001);
        assert!(cmp[1].p_value == 1.0 && cmp[2].p_value == 1.0);
    }

    fn apv(scores: Vec<f32>) -> ApVector {
        let map = NeuronMap::uniform(1, scores.len() as u32, 0).unwrap();
        ApVector::new("c", "k", Pooling::Max, Arc::new(map), scores, 1, 1).unwrap()
    }

    #[test]
    fn identical_vectors_have_no_privileged_experts() {
        let ap = apv(vec![0.95, 0.55, 0.2, 0.7]);
        let h = ap_histograms_shared(&ap, &ap, 0.5, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(h.edges.len(), 50);
        assert_eq!(h.n_shared, 3);
        assert!(h.a.non_shared.iter().all(|&c| c == 0));
        assert_eq!(h.a.shared.iter().sum::<u64>(), 3);
        assert_eq!(h.a.shared[45], 1);
    }

    #[test]
    fn disjoint_experts_have_no_shared_mass() {
        let a = apv(vec![0.9, 0.1, 0.6]);
        let b = apv(vec![0.1, 0.8, 0.4]);
        let h = ap_histograms_shared(&a, &b, 0.5, 0.1).unwrap();
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.n_shared, 0);
        assert!(h.a.shared.iter().chain(&h.b.shared).all(|&c| c == 0));
        assert_eq!((h.a.non_shared.iter().sum::<u64>(), h.b.non_shared.iter().sum::<u64>()), (2, 1));
        // AP of exactly 1 lands in the closed last bin
        let h = ap_histograms_shared(&apv(vec![1.0]), &apv(vec![1.0]), 0.5, 0.1).unwrap();
        assert_eq!(h.a.shared[4], 1);
    }

    #[test]
    fn planted_overlap_masses() {
        // 30 experts each, 12 shared
        let mut rng = SeedPath::root(3).rng();
        let mut a: Vec<f32> = (0..500).map(|_| rng.random_range(0.2..0.45)).collect();
        let mut b = a.clone();
        for i in 0..30 {
            a[i] = rng.random_range(0.6..1.0);
            b[i + 18] = rng.random_range(0.6..1.0);
        }
        let h = ap_histograms_shared(&apv(a), &apv(b), 0.5, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(h.n_shared, 12);
        assert_eq!(h.a.shared.iter().sum::<u64>(), 12);
        assert_eq!(h.a.non_shared.iter().sum::<u64>(), 18);
        assert_eq!(h.b.non_shared.iter().sum::<u64>(), 18);
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive(a in proptest::collection::vec(0.0f32..=1.0, 50), b in proptest::collection::vec(0.0f32..=1.0, 50), tau in 0.3f64..0.95) {
            let h = ap_histograms_shared(&apv(a), &apv(b), tau, DEFAULT_BIN_WIDTH).unwrap();
            for side in [&h.a, &h.b] {
                prop_assert_eq!(side.shared.iter().sum::<u64>() + side.non_shared.iter().sum::<u64>(), side.n_experts);
                prop_assert_eq!(side.shared.iter().sum::<u64>(), h.n_shared);
            }
        }

        #[test]
        fn zero_block_leaves_densities_unchanged(ids in proptest::collection::btree_set(0u64..300, 0..60), extra in 1u32..50) {
            let blocks = vec![
                NeuronBlock { layer: 0, sublayer: Sublayer::Mlp, units: 100 },
                NeuronBlock { layer: 0, sublayer: Sublayer::Attn, units: 50 },
                NeuronBlock { layer: 1, sublayer: Sublayer::Mlp, units: 150 },
            ];
            let map = NeuronMap::new(blocks.clone()).unwrap();
            let mut wider = blocks;
            wider.push(NeuronBlock { layer: 1, sublayer: Sublayer::Attn, units: extra });
            let wider = NeuronMap::new(wider).unwrap();
            let ids: Vec<u64> = ids.into_iter().collect();
            let d1 = layer_distribution(&set_on(&map, ids.clone()), &map).unwrap();
            let d2 = layer_distribution(&set_on(&wider, ids), &wider).unwrap();
            prop_assert_eq!(&d1.buckets[..], &d2.buckets[..3]);
            prop_assert_eq!(d2.buckets[3].density, 0.0);
            prop_assert_eq!(d1.total, d2.total);
        }
    }
}
