// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end runs: load and validate inputs, execute the selected analyses
//! in dependency order and write a deterministic report bundle.

mod config;
pub mod preset;
mod stages;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{resolve_analyses, Analysis, HumanTableInput, Inputs, Params, RunConfig};

use crate::corpus::{
    check_manifests, read_activation_dump, read_json, write_atomic, write_json, ActivationDump, ConceptManifest,
    HumanSimilarityTable,
};
use crate::domains::DomainSpec;
use crate::error::{Error, Result};

/// Named word or sentence embeddings keyed by concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub name: String,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

/// Token lists (already lemmatised) for one concept's intervention study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSet {
    pub concept: String,
    /// Related words before removing those seen in the positive set.
    pub candidates: Vec<String>,
    #[serde(default)]
    pub positive_docs: Vec<Vec<String>>,
    pub baseline: Vec<Vec<String>>,
    pub intervened: Vec<Vec<String>>,
}

/// Everything a run reads, checked for consistency.
pub struct LoadedInputs {
    pub dumps: Vec<ActivationDump>,
    pub manifests: Vec<ConceptManifest>,
    pub human_tables: Vec<HumanSimilarityTable>,
    pub domains: Vec<DomainSpec>,
    pub embeddings: Vec<EmbeddingTable>,
    pub generations: Vec<GenerationSet>,
    /// Index into `dumps` of the checkpoint analysed by single-checkpoint stages.
    pub primary: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub dumps: Vec<DumpSummary>,
    pub concepts: usize,
    pub human_tables: Vec<String>,
    pub domains: usize,
    pub primary_checkpoint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpSummary {
    pub model: String,
    pub checkpoint: String,
    pub n_sentences: usize,
    pub n_neurons: usize,
}

impl LoadedInputs {
    pub fn summary(&self) -> InputSummary {
        InputSummary {
            dumps: self
                .dumps
                .iter()
                .map(|d| DumpSummary {
                    model: d.model().to_string(),
                    checkpoint: d.checkpoint().to_string(),
                    n_sentences: d.n_sentences(),
                    n_neurons: d.n_neurons(),
                })
                .collect(),
            concepts: self.manifests.len(),
            human_tables: self.human_tables.iter().map(|t| t.name.clone()).collect(),
            domains: self.domains.len(),
            primary_checkpoint: self.dumps[self.primary].checkpoint().to_string(),
        }
    }
}

/// Reads every input named by `cfg`; all problems found are reported
/// together as one [`Error::Validation`].
pub fn load_inputs(cfg: &RunConfig) -> Result<LoadedInputs> {
    cfg.validate()?;
    let mut problems = Vec::new();
    let mut note = |path: &Path, e: Error| problems.push(format!("{}: {e}", path.display()));

    let mut dumps = Vec::new();
    for p in &cfg.inputs.dumps {
        let full = cfg.resolve(p);
        match read_activation_dump(&full).and_then(|d| d.validate().map(|_| d)) {
            Ok(d) => dumps.push(d),
            Err(e) => note(&full, e),
        }
    }
    let mpath = cfg.resolve(&cfg.inputs.manifests);
    let manifests: Vec<ConceptManifest> = read_json(&mpath)
        .and_then(|m: Vec<ConceptManifest>| check_manifests(&m).map(|_| m))
        .unwrap_or_else(|e| {
            note(&mpath, e);
            Vec::new()
        });
    let mut human_tables = Vec::new();
    for t in &cfg.inputs.human_tables {
        let full = cfg.resolve(&t.path);
        match HumanSimilarityTable::read_tsv(&full, t.ordinal) {
            Ok(table) => human_tables.push(table),
            Err(e) => note(&full, e),
        }
    }
    let mut domains = Vec::new();
    if let Some(p) = &cfg.inputs.domains {
        let full = cfg.resolve(p);
        match read_json::<Vec<DomainSpec>>(&full) {
            Ok(d) => domains = d,
            Err(e) => note(&full, e),
        }
    }
    let mut embeddings = Vec::new();
    for p in &cfg.inputs.embeddings {
        let full = cfg.resolve(p);
        match read_json::<EmbeddingTable>(&full) {
            Ok(t) => embeddings.push(t),
            Err(e) => note(&full, e),
        }
    }
    let mut generations = Vec::new();
    for p in &cfg.inputs.generations {
        let full = cfg.resolve(p);
        match read_json::<GenerationSet>(&full) {
            Ok(g) => generations.push(g),
            Err(e) => note(&full, e),
        }
    }

    let mut seen = HashSet::new();
    for d in &dumps {
        if !seen.insert((d.model().to_string(), d.checkpoint().to_string())) {
            problems.push(format!("dump {}/{} listed twice", d.model(), d.checkpoint()));
        }
        for m in &manifests {
            if let Err(e) = m.check_against(d) {
                problems.push(format!("manifest {:?} vs dump {}/{}: {e}", m.concept, d.model(), d.checkpoint()));
            }
        }
    }
    let concepts: HashSet<&str> = manifests.iter().map(|m| m.concept.as_str()).collect();
    for d in &domains {
        if let Err(e) = d.validate() {
            problems.push(e.to_string());
        }
        for c in d.specifics.iter().chain([&d.broader]) {
            if !concepts.contains(c.as_str()) {
                problems.push(format!("domain {:?}: no manifest for concept {c:?}", d.name));
            }
        }
    }
    let primary = match &cfg.params.primary_checkpoint {
        Some(cp) => dumps.iter().rposition(|d| d.checkpoint() == cp),
        None => dumps.len().checked_sub(1),
    };
    if primary.is_none() && !dumps.is_empty() {
        problems.push(format!(
            "params.primary_checkpoint {:?} matches no dump",
            cfg.params.primary_checkpoint.as_deref().unwrap_or_default()
        ));
    }
    if manifests.len() < 2 && problems.is_empty() {
        problems.push("at least two concept manifests are required".into());
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    Ok(LoadedInputs {
        dumps,
        manifests,
        human_tables,
        domains,
        embeddings,
        generations,
        primary: primary.expect("checked above"),
    })
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

/// Output directory bookkeeping: every file goes through here so the run
/// manifest can list it.
pub(crate) struct Bundle {
    root: PathBuf,
    config_hash: String,
    seed: u64,
    files: Vec<PathBuf>,
}

impl Bundle {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `body` (a struct) with the config hash and seed added.
    pub(crate) fn report<T: Serialize>(&mut self, rel: &str, body: &T) -> Result<()> {
        let env = Envelope {
            config_hash: &self.config_hash,
            seed: self.seed,
            body,
        };
        write_json(&self.path(rel), &env)?;
        self.files.push(rel.into());
        Ok(())
    }

    pub(crate) fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        crate::corpus::write_text(&self.path(rel), text)?;
        self.files.push(rel.into());
        Ok(())
    }

    pub(crate) fn apv(&mut self, rel: &str, ap: &crate::ap::ApVector) -> Result<()> {
        crate::ap::write_apv(ap, &self.path(rel))?;
        self.files.push(rel.into());
        self.files.push(format!("{rel}.json").into());
        Ok(())
    }
}

/// File-name-safe rendering of a concept, model or checkpoint label.
pub(crate) fn slug(s: &str) -> String {
    let out: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if out.is_empty() || out.starts_with('.') {
        format!("_{out}")
    } else {
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    pub params: Params,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

fn file_record(path: &Path, label: String) -> Result<FileRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let digest = Sha256::digest(&bytes);
    Ok(FileRecord {
        path: label,
        bytes: bytes.len() as u64,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

fn input_paths(cfg: &RunConfig) -> Vec<PathBuf> {
    let i = &cfg.inputs;
    let mut out: Vec<PathBuf> = i.dumps.clone();
    out.extend(i.dumps.iter().map(|d| crate::corpus::actd::sidecar_path(d)));
    out.push(i.manifests.clone());
    out.extend(i.human_tables.iter().map(|t| t.path.clone()));
    out.extend(i.domains.iter().cloned());
    out.extend(i.embeddings.iter().cloned());
    out.extend(i.generations.iter().cloned());
    out
}

/// Runs the configured analyses and writes the bundle under the output
/// directory. Returns the run manifest, also written as `run_manifest.json`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    let inputs = load_inputs(cfg)?;
    let analyses = resolve_analyses(&cfg.analyses);
    let mut bundle = Bundle {
        root: cfg.output_path(),
        config_hash: cfg.config_hash(),
        seed: cfg.seed,
        files: Vec::new(),
    };
    log::info!(
        "run {}: {} dumps, {} concepts, analyses {:?}",
        bundle.config_hash,
        inputs.dumps.len(),
        inputs.manifests.len(),
        analyses.iter().map(|a| a.name()).collect::<Vec<_>>()
    );
    stages::execute(cfg, &inputs, &analyses, &mut bundle)?;

    let mut outputs = bundle
        .files
        .iter()
        .map(|rel| file_record(&bundle.root.join(rel), rel.to_string_lossy().replace('\\', "/")))
        .collect::<Result<Vec<_>>>()?;
    outputs.sort_by(|a, b| a.path.cmp(&b.path));
    let inputs = input_paths(cfg)
        .into_iter()
        .map(|p| file_record(&cfg.resolve(&p), p.to_string_lossy().replace('\\', "/")))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: "expertlens".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: bundle.config_hash.clone(),
        seed: cfg.seed,
        analyses,
        params: cfg.params.clone(),
        inputs,
        outputs,
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::json("run manifest", e))?;
    write_atomic(&bundle.root.join("run_manifest.json"), |f| {
        use std::io::Write;
        f.write_all(&bytes)?;
        f.write_all(b"\n")
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_file_safe() {
        assert_eq!(slug("ice cream/2"), "ice_cream_2");
        assert_eq!(slug("step-143000"), "step-143000");
        assert_eq!(slug(".."), "_..");
        assert_eq!(slug(""), "_");
    }
}
