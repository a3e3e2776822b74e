// SPDX-License-Identifier: MIT OR Apache-2.0

//! Declarative run configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::read_json;
use crate::error::{Error, Result};
use crate::metrics::{MissingPairPolicy, NegAdjForm};

/// Analyses in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Score,
    Experts,
    Similarity,
    Align,
    Domains,
    Layers,
    Folds,
    Checkpoints,
    Plan,
    Genstats,
}

impl Analysis {
    pub const ALL: [Analysis; 10] = [
        Analysis::Score,
        Analysis::Experts,
        Analysis::Similarity,
        Analysis::Align,
        Analysis::Domains,
        Analysis::Layers,
        Analysis::Folds,
        Analysis::Checkpoints,
        Analysis::Plan,
        Analysis::Genstats,
    ];

    /// Analyses whose outputs this one consumes.
    pub fn requires(self) -> &'static [Analysis] {
        match self {
            Analysis::Score | Analysis::Folds | Analysis::Genstats => &[],
            Analysis::Experts | Analysis::Plan => &[Analysis::Score],
            Analysis::Similarity | Analysis::Domains | Analysis::Layers | Analysis::Checkpoints => {
                &[Analysis::Score, Analysis::Experts]
            }
            Analysis::Align => &[Analysis::Score, Analysis::Experts, Analysis::Similarity],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Score => "score",
            Analysis::Experts => "experts",
            Analysis::Similarity => "similarity",
            Analysis::Align => "align",
            Analysis::Domains => "domains",
            Analysis::Layers => "layers",
            Analysis::Folds => "folds",
            Analysis::Checkpoints => "checkpoints",
            Analysis::Plan => "plan",
            Analysis::Genstats => "genstats",
        }
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Requested analyses plus their prerequisites, sorted.
pub fn resolve_analyses(requested: &[Analysis]) -> Vec<Analysis> {
    let mut out: Vec<Analysis> = requested
        .iter()
        .flat_map(|a| a.requires().iter().copied().chain([*a]))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanTableInput {
    pub path: PathBuf,
    /// Scores are relatedness bins rather than continuous ratings.
    #[serde(default)]
    pub ordinal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// ACTD files; for each model, listed in checkpoint order.
    pub dumps: Vec<PathBuf>,
    /// JSON list of concept manifests.
    pub manifests: PathBuf,
    #[serde(default)]
    pub human_tables: Vec<HumanTableInput>,
    /// JSON list of domain specs.
    #[serde(default)]
    pub domains: Option<PathBuf>,
    /// JSON embedding tables `{name, vectors: {concept: [..]}}`.
    #[serde(default)]
    pub embeddings: Vec<PathBuf>,
    /// JSON generation sets for the prevalence analysis.
    #[serde(default)]
    pub generations: Vec<PathBuf>,
}

fn default_taus() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub taus: Vec<f64>,
    pub pos_size: usize,
    pub neg_size: usize,
    /// Extra (pos, neg) fold configurations; empty means just the one above.
    pub fold_sizes: Vec<(usize, usize)>,
    pub folds: usize,
    pub cross_pairs: usize,
    pub bootstrap: usize,
    pub confidence: f64,
    pub permutations: usize,
    pub baseline_replicates: usize,
    pub top_k: usize,
    pub graph_threshold: f64,
    /// Threshold for the concept graph and AP histograms.
    pub graph_tau: f64,
    pub histogram_bin_width: f64,
    pub negadj_form: NegAdjForm,
    pub missing_pairs: MissingPairPolicy,
    /// Checkpoint analysed by the single-checkpoint stages; defaults to the
    /// last dump listed.
    pub primary_checkpoint: Option<String>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            taus: default_taus(),
            pos_size: 400,
            neg_size: 1000,
            fold_sizes: Vec::new(),
            folds: 8,
            cross_pairs: 50,
            bootstrap: 10_000,
            confidence: 0.95,
            permutations: 10_000,
            baseline_replicates: 1000,
            top_k: 500,
            graph_threshold: crate::domains::DEFAULT_GRAPH_THRESHOLD,
            graph_tau: 0.5,
            histogram_bin_width: crate::layers::DEFAULT_BIN_WIDTH,
            negadj_form: NegAdjForm::default(),
            missing_pairs: MissingPairPolicy::default(),
            primary_checkpoint: None,
        }
    }
}

impl Params {
    pub fn fold_configurations(&self) -> Vec<(usize, usize)> {
        if self.fold_sizes.is_empty() {
            vec![(self.pos_size, self.neg_size)]
        } else {
            self.fold_sizes.clone()
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if self.taus.is_empty() {
            p.push("params.taus is empty".into());
        }
        for &t in &self.taus {
            if !unit(t) {
                p.push(format!("params.taus: {t} outside (0, 1)"));
            }
        }
        if !self.taus.windows(2).all(|w| w[0] < w[1]) {
            p.push("params.taus must be strictly increasing".into());
        }
        if !unit(self.graph_tau) {
            p.push(format!("params.graph_tau: {} outside (0, 1)", self.graph_tau));
        }
        if !unit(self.confidence) {
            p.push(format!("params.confidence: {} outside (0, 1)", self.confidence));
        }
        for (name, v) in [
            ("pos_size", self.pos_size),
            ("neg_size", self.neg_size),
            ("bootstrap", self.bootstrap),
            ("permutations", self.permutations),
            ("baseline_replicates", self.baseline_replicates),
            ("top_k", self.top_k),
        ] {
            if v == 0 {
                p.push(format!("params.{name} must be at least 1"));
            }
        }
        if self.folds < 2 {
            p.push(format!("params.folds must be at least 2, got {}", self.folds));
        }
        if self.fold_sizes.iter().any(|&(a, b)| a == 0 || b == 0) {
            p.push("params.fold_sizes entries must be positive".into());
        }
        if !self.graph_threshold.is_finite() {
            p.push("params.graph_threshold must be finite".into());
        }
        if !(self.histogram_bin_width > 0.0 && self.histogram_bin_width < 1.0) {
            p.push("params.histogram_bin_width must be in (0, 1)".into());
        }
        p
    }
}

fn all_analyses() -> Vec<Analysis> {
    Analysis::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Inputs,
    pub output_dir: PathBuf,
    #[serde(default = "all_analyses")]
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub params: Params,
    pub seed: u64,
    /// Directory relative paths are resolved against; the config file's
    /// directory when loaded from disk.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Hex SHA-256 prefix of the canonical JSON form, leaving out where
    /// the bundle is written.
    pub fn config_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serialises");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("output_dir");
        }
        let bytes = serde_json::to_vec(&value).expect("config serialises");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks parameters and that every referenced input exists. All
    /// problems are collected into one [`Error::Validation`].
    pub fn validate(&self) -> Result<()> {
        let mut problems = self.params.problems();
        if self.inputs.dumps.is_empty() {
            problems.push("inputs.dumps is empty".into());
        }
        let i = &self.inputs;
        let named = i
            .dumps
            .iter()
            .map(|d| ("inputs.dumps", d))
            .chain([("inputs.manifests", &i.manifests)])
            .chain(i.human_tables.iter().map(|t| ("inputs.human_tables", &t.path)))
            .chain(i.domains.iter().map(|d| ("inputs.domains", d)))
            .chain(i.embeddings.iter().map(|e| ("inputs.embeddings", e)))
            .chain(i.generations.iter().map(|g| ("inputs.generations", g)));
        for (label, p) in named {
            let full = self.resolve(p);
            if !full.is_file() {
                problems.push(format!("{label}: file not found: {}", full.display()));
            }
        }
        let analyses = resolve_analyses(&self.analyses);
        if analyses.contains(&Analysis::Align) && self.inputs.human_tables.is_empty() {
            problems.push("analysis 'align' needs inputs.human_tables".into());
        }
        if analyses.contains(&Analysis::Domains) && self.inputs.domains.is_none() {
            problems.push("analysis 'domains' needs inputs.domains".into());
        }
        if analyses.contains(&Analysis::Genstats) && self.inputs.generations.is_empty() {
            problems.push("analysis 'genstats' needs inputs.generations".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}
