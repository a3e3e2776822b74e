// SPDX-License-Identifier: MIT OR Apache-2.0

//! Domain structure in expert space: shared cores of specific concepts,
//! their overlap with the broader concept, randomized-domain baselines and
//! concept-graph export.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::csv_string;
use crate::error::{Error, Result};
use crate::experts::sets::{intersection, intersection_len, union};
use crate::experts::{ExpertSet, SelectionRule};
use crate::rng::{sample_indices, SeedPath};

/// Specific concepts of one domain plus the term naming the domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub specifics: Vec<String>,
    pub broader: String,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        if self.specifics.len() < 2 {
            return Err(Error::InvalidArgument(format!("domain {:?} needs at least two specific concepts", self.name)));
        }
        for c in &self.specifics {
            if !seen.insert(c.as_str()) {
                return Err(Error::InvalidArgument(format!("domain {:?} lists {c:?} twice", self.name)));
            }
        }
        if seen.contains(self.broader.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "domain {:?}: broader concept {:?} is also a specific",
                self.name, self.broader
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedCore {
    pub ids: Vec<u64>,
    /// |intersection| / |union| x 100.
    pub pct_shared: f64,
    /// Every input set was empty; `pct_shared` is reported as 0.
    pub empty_union: bool,
}

fn check_compatible(sets: &[&ExpertSet]) -> Result<()> {
    let first = sets[0];
    for s in &sets[1..] {
        if s.rule != first.rule || s.checkpoint != first.checkpoint {
            return Err(Error::Inconsistent(format!(
                "{} ({}, {}) vs {} ({}, {})",
                first.concept, first.checkpoint, first.rule, s.concept, s.checkpoint, s.rule
            )));
        }
        if s.map_hash != first.map_hash {
            return Err(Error::MapMismatch(format!("{} vs {}", first.concept, s.concept)));
        }
    }
    Ok(())
}

/// Intersection of all sets and its share of their union.
pub fn shared_core(sets: &[&ExpertSet]) -> Result<SharedCore> {
    if sets.len() < 2 {
        return Err(Error::InvalidArgument("shared core needs at least two sets".into()));
    }
    check_compatible(sets)?;
    Ok(core_of(sets.iter().map(|s| s.ids.as_slice())))
}

fn core_of<'a>(mut sets: impl Iterator<Item = &'a [u64]>) -> SharedCore {
    let first = sets.next().expect("nonempty").to_vec();
    let (core, all) = sets.fold((first.clone(), first), |(core, all), s| (intersection(&core, s), union(&all, s)));
    let empty_union = all.is_empty();
    let pct_shared = if empty_union {
        0.0
    } else {
        100.0 * core.len() as f64 / all.len() as f64
    };
    SharedCore {
        ids: core,
        pct_shared,
        empty_union,
    }
}

/// Percentage of `core` also in `broader`; `None` for an empty core.
pub fn broader_overlap(core: &[u64], broader: &ExpertSet) -> Option<f64> {
    if core.is_empty() {
        return None;
    }
    Some(100.0 * intersection_len(core, &broader.ids) as f64 / core.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub replicates: usize,
    pub shared_mean: f64,
    pub shared_median: f64,
    /// Mean over replicates whose pseudo-core was nonempty.
    pub broader_mean: Option<f64>,
    pub broader_defined: usize,
    /// One-sided: (1 + #{baseline >= observed}) / (1 + R).
    pub p_shared: f64,
    /// Same, over the replicates where the overlap is defined.
    pub p_broader: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub broader: String,
    pub core: Vec<u64>,
    pub pct_shared_in_domain: f64,
    pub empty_union: bool,
    pub pct_core_in_broader: Option<f64>,
    pub baseline: BaselineSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainReport {
    pub model: String,
    pub checkpoint: String,
    pub rule: SelectionRule,
    pub domains: Vec<DomainResult>,
    pub mean_pct_shared: f64,
    pub mean_pct_broader: Option<f64>,
    /// Domains whose core was empty, left out of `mean_pct_broader`.
    pub n_broader_undefined: usize,
    pub baseline_mean_pct_shared: f64,
    pub baseline_mean_pct_broader: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Observed domain statistics against `replicates` pseudo-domains per
/// domain. A pseudo-domain keeps the real broader concept and draws the
/// specifics uniformly from every other concept in `sets`.
pub fn random_domain_baseline(
    model: &str,
    sets: &[ExpertSet],
    domains: &[DomainSpec],
    replicates: usize,
    seed: SeedPath,
) -> Result<DomainReport> {
    if replicates < 1 {
        return Err(Error::InvalidArgument("baseline needs at least one replicate".into()));
    }
    if domains.is_empty() || sets.is_empty() {
        return Err(Error::InvalidArgument("no domains or expert sets".into()));
    }
    let all: Vec<&ExpertSet> = sets.iter().collect();
    check_compatible(&all)?;
    let by_name: BTreeMap<&str, &ExpertSet> = sets.iter().map(|s| (s.concept.as_str(), s)).collect();
    if by_name.len() != sets.len() {
        return Err(Error::InvalidArgument("expert sets must have distinct concepts".into()));
    }
    let lookup = |c: &str| {
        by_name
            .get(c)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("no expert set for concept {c:?}")))
    };

    let mut results = Vec::with_capacity(domains.len());
    for d in domains {
        d.validate()?;
        let specifics = d.specifics.iter().map(|c| lookup(c)).collect::<Result<Vec<_>>>()?;
        let broader = lookup(&d.broader)?;
        let observed = core_of(specifics.iter().map(|s| s.ids.as_slice()));
        let observed_broader = broader_overlap(&observed.ids, broader);

        let pool: Vec<&ExpertSet> = sets.iter().filter(|s| s.concept != d.broader).collect();
        let k = d.specifics.len();
        if pool.len() < k {
            return Err(Error::InsufficientPool {
                needed: k,
                available: pool.len(),
            });
        }
        let domain_seed = seed.child("baseline").child(&d.name);
        let draws: Vec<(f64, Option<f64>)> = (0..replicates)
            .into_par_iter()
            .map(|r| {
                let mut rng = domain_seed.index(r as u64).rng();
                let picked = sample_indices(&mut rng, pool.len(), k);
                let core = core_of(picked.iter().map(|&i| pool[i].ids.as_slice()));
                (core.pct_shared, broader_overlap(&core.ids, broader))
            })
            .collect();

        let shared: Vec<f64> = draws.iter().map(|d| d.0).collect();
        let defined: Vec<f64> = draws.iter().filter_map(|d| d.1).collect();
        let p_shared =
            (1 + shared.iter().filter(|&&b| b >= observed.pct_shared).count()) as f64 / (1 + replicates) as f64;
        let p_broader = observed_broader.map(|obs| {
            (1 + defined.iter().filter(|&&b| b >= obs).count()) as f64 / (1 + defined.len()) as f64
        });
        if observed.empty_union {
            log::warn!("domain {}: every specific expert set is empty", d.name);
        }
        results.push(DomainResult {
            domain: d.name.clone(),
            broader: d.broader.clone(),
            pct_shared_in_domain: observed.pct_shared,
            empty_union: observed.empty_union,
            pct_core_in_broader: observed_broader,
            core: observed.ids,
            baseline: BaselineSummary {
                replicates,
                shared_mean: mean(shared.iter().copied()).expect("replicates >= 1"),
                shared_median: median(shared),
                broader_mean: mean(defined.iter().copied()),
                broader_defined: defined.len(),
                p_shared,
                p_broader,
            },
        });
    }

    let first = sets[0].clone();
    Ok(DomainReport {
        model: model.to_string(),
        checkpoint: first.checkpoint,
        rule: first.rule,
        mean_pct_shared: mean(results.iter().map(|r| r.pct_shared_in_domain)).expect("nonempty"),
        mean_pct_broader: mean(results.iter().filter_map(|r| r.pct_core_in_broader)),
        n_broader_undefined: results.iter().filter(|r| r.pct_core_in_broader.is_none()).count(),
        baseline_mean_pct_shared: mean(results.iter().map(|r| r.baseline.shared_mean)).expect("nonempty"),
        baseline_mean_pct_broader: mean(results.iter().filter_map(|r| r.baseline.broader_mean)),
        domains: results,
    })
}

/// One row per domain: `model,checkpoint,rule,domain,pct_shared,pct_broader,baseline_shared,baseline_broader,p_shared,p_broader`.
pub fn domain_csv(reports: &[DomainReport]) -> Result<String> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    csv_string(
        "domain csv",
        &[
            "model", "checkpoint", "rule", "domain", "pct_shared", "pct_broader", "baseline_shared",
            "baseline_broader", "p_shared", "p_broader",
        ],
        reports.iter().flat_map(|r| {
            r.domains.iter().map(move |d| {
                vec![
                    r.model.clone(),
                    r.checkpoint.clone(),
                    r.rule.to_string(),
                    d.domain.clone(),
                    d.pct_shared_in_domain.to_string(),
                    opt(d.pct_core_in_broader),
                    d.baseline.shared_mean.to_string(),
                    opt(d.baseline.broader_mean),
                    d.baseline.p_shared.to_string(),
                    opt(d.baseline.p_broader),
                ]
            })
        }),
    )
}

pub const DEFAULT_GRAPH_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Undirected concept graph in node-link form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptGraph {
    pub directed: bool,
    pub threshold: f64,
    pub nodes: Vec<GraphNode>,
    pub links: Vec<GraphEdge>,
}

/// Concept graph from a symmetric similarity matrix. Edges with weight
/// below `threshold` or equal to zero are dropped; self-edges are omitted.
pub fn export_concept_graph(
    concepts: &[String],
    matrix: &[Vec<f64>],
    domain_of: &BTreeMap<String, String>,
    threshold: f64,
) -> Result<ConceptGraph> {
    let n = concepts.len();
    if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidArgument(format!("similarity matrix is not {n} x {n}")));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument("graph threshold must be finite".into()));
    }
    let mut links = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (matrix[i][j], matrix[j][i]);
            if !a.is_finite() || (a - b).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "similarity matrix asymmetric at ({}, {}): {a} vs {b}",
                    concepts[i], concepts[j]
                )));
            }
            if a > 0.0 && a >= threshold {
                links.push(GraphEdge {
                    source: concepts[i].clone(),
                    target: concepts[j].clone(),
                    weight: a,
                });
            }
        }
    }
    Ok(ConceptGraph {
        directed: false,
        threshold,
        nodes: concepts
            .iter()
            .map(|c| GraphNode {
                id: c.clone(),
                domain: domain_of.get(c).cloned(),
            })
            .collect(),
        links,
    })
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl ConceptGraph {
    /// Graphviz DOT text; edge `penwidth` scales with the weight.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph concepts {\n");
        for node in &self.nodes {
            match &node.domain {
                Some(d) => writeln!(out, "  {} [domain={}];", dot_id(&node.id), dot_id(d)),
                None => writeln!(out, "  {};", dot_id(&node.id)),
            }
            .expect("write to string");
        }
        for e in &self.links {
            writeln!(
                out,
                "  {} -- {} [weight={:.6}, penwidth={:.3}];",
                dot_id(&e.source),
                dot_id(&e.target),
                e.weight,
                1.0 + 9.0 * e.weight
            )
            .expect("write to string");
        }
        out.push_str("}\n");
        out
    }
}
