// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded synthetic activation worlds with planted experts.
//!
//! Every sentence belongs to one concept. Activations are standard normal
//! except on the planted experts of a sentence's own concept, which are
//! shifted by that concept's `shift`. Negatives for a concept are sampled
//! from the other concepts' sentences, as for real corpora.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_negative_set, ActivationDump, ConceptManifest, HumanPair, HumanScore, HumanSimilarityTable, Label,
    ManifestEntry, NeuronMap, Pooling, PromptType,
};
use crate::domains::DomainSpec;
use crate::error::{Error, Result};
use crate::experts::sets::jaccard_ids;
use crate::rng::{sample_indices, standard_normal, SeedPath};

/// How planted expert sets relate to each other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Structure {
    /// Disjoint planted sets.
    Independent { n_concepts: usize },
    /// Concepts 2i and 2i+1 share `sharing[i]` of their planted experts.
    Pairs { sharing: Vec<f64> },
    /// Domains of specific concepts sharing a core, plus a broader concept
    /// holding `broader_core_fraction` of that core.
    Hierarchy {
        n_domains: usize,
        n_specific: usize,
        core_size: usize,
        broader_core_fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub model: String,
    /// One dump per checkpoint; planted sets drift between consecutive ones.
    pub checkpoints: Vec<String>,
    /// Fraction of each planted set replaced at every checkpoint step.
    #[serde(default)]
    pub drift: f64,
    pub neuron_map: NeuronMap,
    pub experts_per_concept: usize,
    /// Mean offset of planted cells, in noise standard deviations.
    pub shift: f64,
    /// Per-concept override of `shift`.
    #[serde(default)]
    pub concept_shifts: Option<Vec<f64>>,
    pub structure: Structure,
    /// Sentences per concept; all are positives of that concept.
    pub pos_size: usize,
    /// Negatives listed in each concept's manifest.
    pub neg_size: usize,
    #[serde(default)]
    pub pooling: Pooling,
    pub seed: u64,
}

impl SynthConfig {
    /// `n_concepts` independent concepts on a single-layer MLP map.
    pub fn independent(n_neurons: u32, n_concepts: usize, experts: usize, shift: f64, seed: u64) -> Result<Self> {
        Ok(SynthConfig {
            model: "synthetic".into(),
            checkpoints: vec!["final".into()],
            drift: 0.0,
            neuron_map: NeuronMap::uniform(1, n_neurons, 0)?,
            experts_per_concept: experts,
            shift,
            concept_shifts: None,
            structure: Structure::Independent { n_concepts },
            pos_size: 400,
            neg_size: 1000,
            pooling: Pooling::Max,
            seed,
        })
    }

    pub fn n_concepts(&self) -> usize {
        match &self.structure {
            Structure::Independent { n_concepts } => *n_concepts,
            Structure::Pairs { sharing } => 2 * sharing.len(),
            Structure::Hierarchy {
                n_domains, n_specific, ..
            } => n_domains * (n_specific + 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.neuron_map.n_neurons() as usize;
        let nc = self.n_concepts();
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.checkpoints.is_empty() {
            return bad("at least one checkpoint is required".into());
        }
        if nc < 2 {
            return bad("at least two concepts are required".into());
        }
        if self.experts_per_concept == 0 || self.experts_per_concept > n {
            return bad(format!("experts_per_concept must be in 1..={n}"));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return bad("shift must be finite and >= 0".into());
        }
        if let Some(s) = &self.concept_shifts {
            if s.len() != nc || s.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                return bad(format!("concept_shifts needs {nc} finite values >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return bad("drift must be in [0, 1]".into());
        }
        if self.pos_size == 0 || self.neg_size == 0 {
            return bad("pos_size and neg_size must be positive".into());
        }
        if self.neg_size > (nc - 1) * self.pos_size {
            return bad(format!(
                "neg_size {} exceeds the {} sentences of the other concepts",
                self.neg_size,
                (nc - 1) * self.pos_size
            ));
        }
        match &self.structure {
            Structure::Independent { .. } => {}
            Structure::Pairs { sharing } => {
                if sharing.iter().any(|s| !(0.0..=1.0).contains(s)) {
                    return bad("sharing fractions must be in [0, 1]".into());
                }
            }
            Structure::Hierarchy {
                n_specific,
                core_size,
                broader_core_fraction,
                ..
            } => {
                if *n_specific < 2 {
                    return bad("hierarchy needs at least two specific concepts per domain".into());
                }
                if *core_size > self.experts_per_concept {
                    return bad(format!(
                        "core_size {core_size} exceeds experts_per_concept {}",
                        self.experts_per_concept
                    ));
                }
                if !(0.0..=1.0).contains(broader_core_fraction) {
                    return bad("broader_core_fraction must be in [0, 1]".into());
                }
            }
        }
        Ok(())
    }
}

/// Planted expert ids per concept at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCheckpoint {
    pub checkpoint: String,
    pub experts: BTreeMap<String, Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub structure: Structure,
    pub concepts: Vec<String>,
    pub checkpoints: Vec<PlantedCheckpoint>,
    pub domains: Vec<DomainSpec>,
    /// Planted shared core per domain name.
    pub cores: BTreeMap<String, Vec<u64>>,
}

impl GroundTruth {
    pub fn planted(&self, checkpoint: usize, concept: &str) -> Option<&[u64]> {
        self.checkpoints.get(checkpoint)?.experts.get(concept).map(Vec::as_slice)
    }
}

pub struct SynthWorld {
    pub config: SynthConfig,
    /// One dump per checkpoint, same sentences in the same order.
    pub dumps: Vec<ActivationDump>,
    pub manifests: Vec<ConceptManifest>,
    pub truth: GroundTruth,
}

impl SynthWorld {
    /// Human-style table over `pairs` scoring each pair by its planted
    /// Jaccard at the first checkpoint, scaled to 0..50, plus Gaussian noise.
    pub fn human_table(&self, name: &str, pairs: &[(String, String)], noise: f64, seed: SeedPath) -> Result<HumanSimilarityTable> {
        let mut rng = seed.rng();
        let rows = pairs
            .iter()
            .map(|(a, b)| {
                let (sa, sb) = (self.truth.planted(0, a), self.truth.planted(0, b));
                let (Some(sa), Some(sb)) = (sa, sb) else {
                    return Err(Error::InvalidArgument(format!("unknown concept in pair ({a}, {b})")));
                };
                Ok(HumanPair {
                    a: a.clone(),
                    b: b.clone(),
                    score: HumanScore::Continuous(50.0 * jaccard_ids(sa, sb) + noise * standard_normal(&mut rng)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        HumanSimilarityTable::new(name, rows)
    }
}

fn concept_names(structure: &Structure) -> (Vec<String>, Vec<DomainSpec>) {
    match structure {
        Structure::Independent { n_concepts } => ((0..*n_concepts).map(|i| format!("c{i:03}")).collect(), Vec::new()),
        Structure::Pairs { sharing } => (
            (0..sharing.len())
                .flat_map(|i| [format!("p{i:03}a"), format!("p{i:03}b")])
                .collect(),
            Vec::new(),
        ),
        Structure::Hierarchy {
            n_domains, n_specific, ..
        } => {
            let mut names = Vec::new();
            let mut domains = Vec::new();
            for d in 0..*n_domains {
                let specifics: Vec<String> = (0..*n_specific).map(|s| format!("d{d:02}s{s}")).collect();
                let broader = format!("d{d:02}broad");
                names.extend(specifics.iter().cloned());
                names.push(broader.clone());
                domains.push(DomainSpec {
                    name: format!("domain{d:02}"),
                    specifics,
                    broader,
                });
            }
            (names, domains)
        }
    }
}

/// Hands out never-used neurons in a seeded random order.
struct FreshNeurons {
    order: Vec<u64>,
    next: usize,
}

impl FreshNeurons {
    fn new(n: u64, seed: SeedPath) -> Self {
        let mut order: Vec<u64> = (0..n).collect();
        order.shuffle(&mut seed.rng());
        FreshNeurons { order, next: 0 }
    }

    fn take(&mut self, k: usize) -> Result<Vec<u64>> {
        if self.next + k > self.order.len() {
            return Err(Error::InvalidArgument(format!(
                "map has {} neurons, too few for the planted layout",
                self.order.len()
            )));
        }
        let out = self.order[self.next..self.next + k].to_vec();
        self.next += k;
        Ok(out)
    }
}

fn sorted(mut v: Vec<u64>) -> Vec<u64> {
    v.sort_unstable();
    v
}

/// Planted ids per concept, and per-domain cores.
type Planted = (Vec<Vec<u64>>, BTreeMap<String, Vec<u64>>);

fn plant(cfg: &SynthConfig, names: &[String], fresh: &mut FreshNeurons) -> Result<Planted> {
    let e = cfg.experts_per_concept;
    let mut cores = BTreeMap::new();
    let sets = match &cfg.structure {
        Structure::Independent { n_concepts } => (0..*n_concepts).map(|_| fresh.take(e).map(sorted)).collect::<Result<_>>()?,
        Structure::Pairs { sharing } => {
            let mut out = Vec::with_capacity(2 * sharing.len());
            for &s in sharing {
                let a = fresh.take(e)?;
                let m = (s * e as f64).round() as usize;
                let mut b = a[..m].to_vec();
                b.extend(fresh.take(e - m)?);
                out.push(sorted(a));
                out.push(sorted(b));
            }
            out
        }
        Structure::Hierarchy {
            n_domains,
            n_specific,
            core_size,
            broader_core_fraction,
        } => {
            let mut out = Vec::new();
            for d in 0..*n_domains {
                let core = fresh.take(*core_size)?;
                for _ in 0..*n_specific {
                    let mut s = core.clone();
                    s.extend(fresh.take(e - core_size)?);
                    out.push(sorted(s));
                }
                let kept = (broader_core_fraction * *core_size as f64).round() as usize;
                let mut b = core[..kept].to_vec();
                b.extend(fresh.take(e - kept)?);
                out.push(sorted(b));
                cores.insert(format!("domain{d:02}"), sorted(core));
            }
            out
        }
    };
    debug_assert_eq!(sets.len(), names.len());
    Ok((sets, cores))
}

/// Replaces `round(drift * |set|)` random members of every set with fresh
/// neurons.
fn drift_step(sets: &[Vec<u64>], drift: f64, fresh: &mut FreshNeurons, seed: SeedPath) -> Result<Vec<Vec<u64>>> {
    sets.iter()
        .enumerate()
        .map(|(c, set)| {
            let m = (drift * set.len() as f64).round() as usize;
            let mut rng = seed.index(c as u64).rng();
            let dropped = sample_indices(&mut rng, set.len(), m);
            let mut next: Vec<u64> = set
                .iter()
                .enumerate()
                .filter(|(i, _)| dropped.binary_search(i).is_err())
                .map(|(_, &id)| id)
                .collect();
            next.extend(fresh.take(m)?);
            Ok(sorted(next))
        })
        .collect()
}

fn activations(cfg: &SynthConfig, planted: &[Vec<u64>], shifts: &[f64], seed: SeedPath) -> Vec<f32> {
    let n = cfg.neuron_map.n_neurons() as usize;
    let rows = planted.len() * cfg.pos_size;
    let mut values = vec![0f32; rows * n];
    values.par_chunks_mut(n).enumerate().for_each(|(r, row)| {
        let mut rng = seed.index(r as u64).rng();
        for v in row.iter_mut() {
            *v = standard_normal(&mut rng) as f32;
        }
        let c = r / cfg.pos_size;
        for &id in &planted[c] {
            row[id as usize] = (f64::from(row[id as usize]) + shifts[c]) as f32;
        }
    });
    values
}

/// Builds the world described by `cfg`. Identical configs give
/// bit-identical dumps regardless of thread count.
pub fn generate_synthetic_concepts(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let root = SeedPath::root(cfg.seed);
    let (names, domains) = concept_names(&cfg.structure);
    let shifts: Vec<f64> = cfg.concept_shifts.clone().unwrap_or_else(|| vec![cfg.shift; names.len()]);

    let mut fresh = FreshNeurons::new(cfg.neuron_map.n_neurons(), root.child("layout"));
    let (mut sets, cores) = plant(cfg, &names, &mut fresh)?;
    let mut planted = Vec::with_capacity(cfg.checkpoints.len());
    for (t, cp) in cfg.checkpoints.iter().enumerate() {
        if t > 0 {
            sets = drift_step(&sets, cfg.drift, &mut fresh, root.child("drift").index(t as u64))?;
        }
        planted.push((cp.clone(), sets.clone()));
    }

    let positives: Vec<ConceptManifest> = names
        .iter()
        .map(|name| {
            let entries = (0..cfg.pos_size)
                .map(|i| {
                    let prompt = if i % 2 == 0 { PromptType::Fact } else { PromptType::Story };
                    ManifestEntry::from_text(&format!("synthetic sentence {i} about {name}"), Label::Positive, prompt)
                })
                .collect();
            ConceptManifest::new(name.clone(), "synthetic", entries)
        })
        .collect();
    let sentence_ids: Vec<_> = positives.iter().flat_map(|m| m.entries.iter().map(|e| e.id)).collect();

    let manifests = positives
        .iter()
        .enumerate()
        .map(|(c, target)| {
            let pool: Vec<ConceptManifest> = positives
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != c)
                .map(|(_, m)| m.clone())
                .collect();
            let neg = build_negative_set(&pool, target, cfg.neg_size, root.child("negatives").child(&target.concept))?;
            let by_id: BTreeMap<_, _> = pool.iter().flat_map(|m| m.entries.iter()).map(|e| (e.id, e)).collect();
            let mut entries = target.entries.clone();
            entries.extend(neg.iter().map(|id| ManifestEntry {
                label: Label::Negative,
                ..by_id[id].clone()
            }));
            Ok(ConceptManifest::new(target.concept.clone(), "synthetic", entries))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut dumps = Vec::with_capacity(planted.len());
    for (cp, sets) in &planted {
        let values = activations(cfg, sets, &shifts, root.child("activations").child(cp));
        let dump = ActivationDump::new(
            cfg.model.clone(),
            cp.clone(),
            cfg.pooling,
            cfg.neuron_map.clone(),
            sentence_ids.clone(),
            values,
        )?
        .with_metadata("generator", "synthetic")
        .with_metadata("seed", cfg.seed.to_string());
        dumps.push(dump);
    }

    let truth = GroundTruth {
        seed: cfg.seed,
        structure: cfg.structure.clone(),
        concepts: names.clone(),
        checkpoints: planted
            .into_iter()
            .map(|(checkpoint, sets)| PlantedCheckpoint {
                checkpoint,
                experts: names.iter().cloned().zip(sets).collect(),
            })
            .collect(),
        domains,
        cores,
    };
    Ok(SynthWorld {
        config: cfg.clone(),
        dumps,
        manifests,
        truth,
    })
}

/// [`generate_synthetic_concepts`] restricted to hierarchy configs.
pub fn generate_synthetic_hierarchy(cfg: &SynthConfig) -> Result<SynthWorld> {
    if !matches!(cfg.structure, Structure::Hierarchy { .. }) {
        return Err(Error::InvalidArgument("hierarchy generation needs a HIERARCHY structure".into()));
    }
    generate_synthetic_concepts(cfg)
}

/// Token lists for a baseline and an intervened generation arm. Every
/// generation has `len` filler tokens; in the intervened arm each token is
/// replaced by a word from `words` with probability `lift`, and in the
/// baseline arm with probability `base_rate`.
pub fn synthetic_generations(
    words: &[String],
    n: usize,
    len: usize,
    base_rate: f64,
    lift: f64,
    seed: SeedPath,
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let arm = |rate: f64, seed: SeedPath| -> Vec<Vec<String>> {
        (0..n)
            .map(|g| {
                let mut rng = seed.index(g as u64).rng();
                (0..len)
                    .map(|_| {
                        let u: f64 = rand::Rng::random(&mut rng);
                        if !words.is_empty() && u < rate {
                            words[crate::rng::below(&mut rng, words.len())].clone()
                        } else {
                            format!("filler{}", crate::rng::below(&mut rng, 500))
                        }
                    })
                    .collect()
            })
            .collect()
    };
    (arm(base_rate, seed.child("baseline")), arm(lift, seed.child("intervened")))
}
