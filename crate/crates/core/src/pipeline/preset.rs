// SPDX-License-Identifier: MIT OR Apache-2.0

//! Ready-to-run synthetic input sets.

use std::path::{Path, PathBuf};

use rand::Rng;

use super::{EmbeddingTable, GenerationSet, HumanTableInput, Inputs, Params, RunConfig};
use crate::corpus::{write_activation_dump, write_json, write_text, HumanPair, HumanScore, HumanSimilarityTable, NeuronMap, Pooling, SimilarityBin};
use crate::error::{Error, Result};
use crate::experts::sets::jaccard_ids;
use crate::rng::{standard_normal, SeedPath};
use crate::synth::{generate_synthetic_hierarchy, synthetic_generations, Structure, SynthConfig, SynthWorld};

pub const PRESETS: [&str; 1] = ["paper-desk"];

/// World behind the `paper-desk` preset: 5 domains of 4 specific concepts
/// and one broader concept on a 4-layer map, seen at two checkpoints.
pub fn paper_desk_config(seed: u64) -> Result<SynthConfig> {
    Ok(SynthConfig {
        model: "synthetic-desk".into(),
        checkpoints: vec!["step1000".into(), "final".into()],
        drift: 0.1,
        neuron_map: NeuronMap::uniform(4, 512, 128)?,
        experts_per_concept: 30,
        shift: 4.0,
        concept_shifts: None,
        structure: Structure::Hierarchy {
            n_domains: 5,
            n_specific: 4,
            core_size: 6,
            broader_core_fraction: 0.5,
        },
        pos_size: 60,
        neg_size: 150,
        pooling: Pooling::Max,
        seed,
    })
}

fn paper_desk_params() -> Params {
    Params {
        pos_size: 40,
        neg_size: 100,
        folds: 4,
        cross_pairs: 20,
        bootstrap: 1000,
        permutations: 999,
        baseline_replicates: 200,
        top_k: 50,
        ..Params::default()
    }
}

/// Writes the named preset under `out_dir` and returns the path of its
/// run configuration.
pub fn write_preset(name: &str, out_dir: &Path, seed: u64) -> Result<PathBuf> {
    match name {
        "paper-desk" => write_paper_desk(out_dir, seed),
        other => Err(Error::InvalidArgument(format!(
            "unknown preset {other:?}; available: {}",
            PRESETS.join(", ")
        ))),
    }
}

fn all_pairs(concepts: &[String]) -> Vec<(String, String)> {
    concepts
        .iter()
        .enumerate()
        .flat_map(|(i, a)| concepts[i + 1..].iter().map(move |b| (a.clone(), b.clone())))
        .collect()
}

/// Ordinal table binning pairs by planted overlap: disjoint sets are
/// unrelated, pairs below `strong` are weak.
fn ordinal_table(world: &SynthWorld, pairs: &[(String, String)], strong: f64) -> Result<HumanSimilarityTable> {
    let rows = pairs
        .iter()
        .map(|(a, b)| {
            let j = match (world.truth.planted(0, a), world.truth.planted(0, b)) {
                (Some(x), Some(y)) => jaccard_ids(x, y),
                _ => return Err(Error::InvalidArgument(format!("unknown concept in pair ({a}, {b})"))),
            };
            let bin = if j == 0.0 {
                SimilarityBin::Unrelated
            } else if j < strong {
                SimilarityBin::Weak
            } else {
                SimilarityBin::Strong
            };
            Ok(HumanPair {
                a: a.clone(),
                b: b.clone(),
                score: HumanScore::Ordinal(bin),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    HumanSimilarityTable::new("levels", rows)
}

/// Domain direction plus per-concept noise.
fn embeddings(world: &SynthWorld, dim: usize, seed: SeedPath) -> EmbeddingTable {
    let mut vectors = std::collections::BTreeMap::new();
    for (d, spec) in world.truth.domains.iter().enumerate() {
        let mut rng = seed.child("domain").index(d as u64).rng();
        let centre: Vec<f64> = (0..dim).map(|_| standard_normal(&mut rng)).collect();
        for c in spec.specifics.iter().chain([&spec.broader]) {
            let mut rng = seed.child(c).rng();
            let v = centre.iter().map(|&x| (x + 0.8 * standard_normal(&mut rng)) as f32).collect();
            vectors.insert(c.clone(), v);
        }
    }
    EmbeddingTable {
        name: "synthetic".into(),
        vectors,
    }
}

fn generation_set(concept: &str, pos_size: usize, seed: SeedPath) -> GenerationSet {
    let candidates: Vec<String> = (0..10).map(|i| format!("{concept}_word{i}")).collect();
    // the first three candidates occur in the positive sentences
    let positive_docs = (0..pos_size)
        .map(|k| {
            let mut doc: Vec<String> = ["synthetic", "sentence", "about", concept].iter().map(|s| s.to_string()).collect();
            doc.push(k.to_string());
            if k < 3 {
                doc.push(candidates[k].clone());
            }
            doc
        })
        .collect();
    let lift = 0.01 + 0.02 * seed.child("lift").rng().random::<f64>();
    let (baseline, intervened) = synthetic_generations(&candidates[3..], 200, 40, 0.01, lift, seed);
    GenerationSet {
        concept: concept.to_string(),
        candidates,
        positive_docs,
        baseline,
        intervened,
    }
}

fn write_paper_desk(out: &Path, seed: u64) -> Result<PathBuf> {
    let cfg = paper_desk_config(seed)?;
    let world = generate_synthetic_hierarchy(&cfg)?;
    let root = SeedPath::root(seed).child("preset");

    let mut dumps = Vec::new();
    for d in &world.dumps {
        let rel = PathBuf::from(format!("dumps/{}.actd", d.checkpoint()));
        write_activation_dump(d, &out.join(&rel))?;
        dumps.push(rel);
    }
    write_json(&out.join("manifests.json"), &world.manifests)?;
    write_json(&out.join("domains.json"), &world.truth.domains)?;
    write_json(&out.join("ground_truth.json"), &world.truth)?;
    write_json(&out.join("synth_config.json"), &cfg)?;

    let pairs = all_pairs(&world.truth.concepts);
    let men_like = world.human_table("graded", &pairs, 2.0, root.child("human"))?;
    write_text(&out.join("human/graded.tsv"), &men_like.to_tsv())?;
    // specific pairs share the whole core, broader-specific pairs part of it
    let levels = ordinal_table(&world, &pairs, 0.08)?;
    write_text(&out.join("human/levels.tsv"), &levels.to_tsv())?;
    write_json(&out.join("embeddings.json"), &embeddings(&world, 16, root.child("embeddings")))?;

    let mut generations = Vec::new();
    for spec in &world.truth.domains {
        let concept = &spec.specifics[0];
        let rel = PathBuf::from(format!("generations/{concept}.json"));
        write_json(&out.join(&rel), &generation_set(concept, cfg.pos_size, root.child("generations").child(concept)))?;
        generations.push(rel);
    }

    let run = RunConfig {
        inputs: Inputs {
            dumps,
            manifests: "manifests.json".into(),
            human_tables: vec![
                HumanTableInput {
                    path: "human/graded.tsv".into(),
                    ordinal: false,
                },
                HumanTableInput {
                    path: "human/levels.tsv".into(),
                    ordinal: true,
                },
            ],
            domains: Some("domains.json".into()),
            embeddings: vec!["embeddings.json".into()],
            generations,
        },
        output_dir: "report".into(),
        analyses: super::Analysis::ALL.to_vec(),
        params: paper_desk_params(),
        seed,
        base_dir: out.to_path_buf(),
    };
    let path = out.join("desk.json");
    write_json(&path, &run)?;
    Ok(path)
}
