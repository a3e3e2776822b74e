// SPDX-License-Identifier: MIT OR Apache-2.0

//! On-disk formats and sentence-set construction.
//!
//! Only the activation matrix is binary ([`actd`]); concept manifests and
//! human tables are JSON or TSV. Sentences are identified by the FNV-1a
//! hash of their whitespace-normalized text.

pub mod actd;
pub mod human;
pub mod neuron;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{sample_indices, SeedPath};

pub use actd::{read_activation_dump, write_activation_dump, ActivationDump};
pub use human::{HumanPair, HumanScore, HumanSimilarityTable, SimilarityBin};
pub use neuron::{NeuronBlock, NeuronId, NeuronMap, Sublayer};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Stable sentence identity: FNV-1a of the normalized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SentenceId(pub u64);

impl SentenceId {
    pub fn from_text(text: &str) -> Self {
        SentenceId(fnv1a64(normalize_text(text).as_bytes()))
    }
}

impl fmt::Display for SentenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

/// Independent content hash (SHA-256 prefix) used to detect FNV collisions.
pub fn text_hash(text: &str) -> u64 {
    let digest = Sha256::digest(normalize_text(text).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// Serializes a `u64` as a 16-digit hex string (layout hashes, config
/// hashes); JSON consumers without 64-bit integers read them intact.
pub mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16).map_err(serde::de::Error::custom)
    }
}

/// Reduction of per-token activations to one value per sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pooling {
    #[default]
    Max,
    Mean,
}

impl Pooling {
    pub fn code(self) -> u8 {
        match self {
            Pooling::Max => 0,
            Pooling::Mean => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Pooling::Max),
            1 => Some(Pooling::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptType {
    Fact,
    Story,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: SentenceId,
    pub label: Label,
    pub text_hash: u64,
    #[serde(default)]
    pub prompt_type: PromptType,
}

impl ManifestEntry {
    pub fn from_text(text: &str, label: Label, prompt_type: PromptType) -> Self {
        ManifestEntry {
            id: SentenceId::from_text(text),
            label,
            text_hash: text_hash(text),
            prompt_type,
        }
    }
}

/// Labelled sentence list defining one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptManifest {
    pub concept: String,
    #[serde(default)]
    pub generator: String,
    pub entries: Vec<ManifestEntry>,
}

impl ConceptManifest {
    pub fn new(concept: impl Into<String>, generator: impl Into<String>, entries: Vec<ManifestEntry>) -> Self {
        ConceptManifest {
            concept: concept.into(),
            generator: generator.into(),
            entries,
        }
    }

    pub fn ids_with(&self, label: Label) -> impl Iterator<Item = SentenceId> + '_ {
        self.entries.iter().filter(move |e| e.label == label).map(|e| e.id)
    }

    pub fn positives(&self) -> Vec<SentenceId> {
        self.ids_with(Label::Positive).collect()
    }

    pub fn negatives(&self) -> Vec<SentenceId> {
        self.ids_with(Label::Negative).collect()
    }

    pub fn counts(&self) -> (usize, usize) {
        let n_pos = self.entries.iter().filter(|e| e.label == Label::Positive).count();
        (n_pos, self.entries.len() - n_pos)
    }

    /// Sentence IDs unique; FNV collisions detected via the content hash.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<SentenceId, u64> = HashMap::with_capacity(self.entries.len());
        for e in &self.entries {
            if let Some(prev) = seen.insert(e.id, e.text_hash) {
                return Err(Error::InvalidManifest(if prev == e.text_hash {
                    format!("concept {:?}: duplicate sentence {}", self.concept, e.id)
                } else {
                    format!("concept {:?}: hash collision on sentence id {}", self.concept, e.id)
                }));
            }
        }
        Ok(())
    }

    /// Both classes present; required before scoring.
    pub fn require_both_classes(&self) -> Result<()> {
        let (n_pos, n_neg) = self.counts();
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::MissingClass {
                concept: self.concept.clone(),
                n_pos,
                n_neg,
            });
        }
        Ok(())
    }

    /// Every entry's sentence must exist in `dump`.
    pub fn check_against(&self, dump: &ActivationDump) -> Result<()> {
        for e in &self.entries {
            if dump.row_index(e.id).is_none() {
                return Err(Error::MissingSentence(e.id));
            }
        }
        Ok(())
    }
}

/// Validates each manifest and checks that a sentence ID maps to the same
/// content hash everywhere it appears.
pub fn check_manifests(manifests: &[ConceptManifest]) -> Result<()> {
    let mut names = HashSet::new();
    let mut hashes: HashMap<SentenceId, u64> = HashMap::new();
    for m in manifests {
        m.validate()?;
        if !names.insert(m.concept.as_str()) {
            return Err(Error::InvalidManifest(format!("concept {:?} listed twice", m.concept)));
        }
        for e in &m.entries {
            if let Some(&h) = hashes.get(&e.id) {
                if h != e.text_hash {
                    return Err(Error::InvalidManifest(format!("hash collision on sentence id {}", e.id)));
                }
            } else {
                hashes.insert(e.id, e.text_hash);
            }
        }
    }
    Ok(())
}

/// Samples `size` negatives uniformly without replacement from the positive
/// sentences of the non-target concepts in `pool`, skipping any sentence that
/// also appears in `target`. The result is ordered by pool position.
pub fn build_negative_set(
    pool: &[ConceptManifest],
    target: &ConceptManifest,
    size: usize,
    seed: SeedPath,
) -> Result<Vec<SentenceId>> {
    if pool.iter().any(|m| m.concept == target.concept) {
        return Err(Error::TargetInPool(target.concept.clone()));
    }
    let excluded: HashSet<SentenceId> = target.entries.iter().map(|e| e.id).collect();
    let mut seen = HashSet::new();
    let candidates: Vec<SentenceId> = pool
        .iter()
        .flat_map(|m| m.ids_with(Label::Positive))
        .filter(|id| !excluded.contains(id) && seen.insert(*id))
        .collect();
    if candidates.len() < size {
        return Err(Error::InsufficientPool {
            needed: size,
            available: candidates.len(),
        });
    }
    let mut rng = seed.rng();
    Ok(sample_indices(&mut rng, candidates.len(), size)
        .into_iter()
        .map(|i| candidates[i])
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeTokenReport {
    pub per_document: Vec<f64>,
    pub mean: f64,
}

/// Unique-token count over token count, per document and averaged.
pub fn type_token_ratio<S: AsRef<str>>(documents: &[Vec<S>]) -> Result<TypeTokenReport> {
    if documents.is_empty() {
        return Err(Error::InvalidArgument("no documents".into()));
    }
    let mut per_document = Vec::with_capacity(documents.len());
    for (i, doc) in documents.iter().enumerate() {
        if doc.is_empty() {
            return Err(Error::EmptyDocument(i));
        }
        let types: HashSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        per_document.push(types.len() as f64 / doc.len() as f64);
    }
    let mean = per_document.iter().sum::<f64>() / per_document.len() as f64;
    Ok(TypeTokenReport { per_document, mean })
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> std::io::Result<()>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = File::create(&tmp).and_then(|mut f| {
        write(&mut f)?;
        f.flush()?;
        f.sync_all()
    });
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |f| f.write_all(text.as_bytes()))
}

/// Renders a header and rows as CSV text.
pub fn csv_string<I>(context: &str, header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let table_err = |message: String| Error::Table {
        context: context.into(),
        message,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| table_err(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| table_err(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| table_err(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes =
        serde_json::to_vec_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    bytes.push(b'\n');
    write_atomic(path, |f| f.write_all(&bytes))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn read_manifests(path: &Path) -> Result<Vec<ConceptManifest>> {
    let manifests: Vec<ConceptManifest> = read_json(path)?;
    check_manifests(&manifests)?;
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept(name: &str, n: usize) -> ConceptManifest {
        let entries = (0..n)
            .map(|i| ManifestEntry::from_text(&format!("{name} sentence {i}"), Label::Positive, PromptType::Fact))
            .collect();
        ConceptManifest::new(name, "test", entries)
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn sentence_id_ignores_whitespace_layout() {
        assert_eq!(SentenceId::from_text("  the cat\tsat "), SentenceId::from_text("the cat sat"));
        assert_ne!(SentenceId::from_text("the cat sat"), SentenceId::from_text("the cat sat."));
    }

    #[test]
    fn manifest_detects_duplicates_and_collisions() {
        let mut m = concept("cat", 3);
        assert!(m.validate().is_ok());
        m.entries.push(m.entries[0].clone());
        assert!(m.validate().unwrap_err().to_string().contains("duplicate"));
        m.entries.last_mut().unwrap().text_hash ^= 1;
        assert!(m.validate().unwrap_err().to_string().contains("collision"));
    }

    #[test]
    fn negative_set_over_large_pool() {
        let target = concept("cat", 400);
        let pool: Vec<ConceptManifest> = (0..999).map(|i| concept(&format!("c{i}"), 400)).collect();
        let neg = build_negative_set(&pool, &target, 1000, SeedPath::root(3)).unwrap();
        assert_eq!(neg.len(), 1000);
        let unique: HashSet<_> = neg.iter().collect();
        assert_eq!(unique.len(), 1000);
        let target_ids: HashSet<_> = target.entries.iter().map(|e| e.id).collect();
        assert!(neg.iter().all(|id| !target_ids.contains(id)));
    }

    #[test]
    fn negative_set_exhaustive_and_deterministic() {
        let target = concept("cat", 10);
        let pool = vec![concept("dog", 30), concept("car", 20)];
        let all = build_negative_set(&pool, &target, 50, SeedPath::root(1)).unwrap();
        let all2 = build_negative_set(&pool, &target, 50, SeedPath::root(99)).unwrap();
        assert_eq!(all, all2);
        let a = build_negative_set(&pool, &target, 20, SeedPath::root(5)).unwrap();
        let b = build_negative_set(&pool, &target, 20, SeedPath::root(5)).unwrap();
        let c = build_negative_set(&pool, &target, 20, SeedPath::root(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negative_set_errors() {
        let target = concept("cat", 10);
        let pool = vec![concept("dog", 5)];
        assert!(matches!(
            build_negative_set(&pool, &target, 6, SeedPath::root(0)),
            Err(Error::InsufficientPool { needed: 6, available: 5 })
        ));
        let with_target = vec![concept("dog", 5), concept("cat", 5)];
        assert!(matches!(
            build_negative_set(&with_target, &target, 2, SeedPath::root(0)),
            Err(Error::TargetInPool(_))
        ));
    }

    #[test]
    fn negative_set_skips_sentences_shared_with_target() {
        let target = concept("cat", 4);
        let mut dog = concept("dog", 4);
        dog.entries.extend(target.entries.iter().cloned());
        let neg = build_negative_set(&[dog], &target, 4, SeedPath::root(0)).unwrap();
        let target_ids: HashSet<_> = target.entries.iter().map(|e| e.id).collect();
        assert!(neg.iter().all(|id| !target_ids.contains(id)));
        assert!(build_negative_set(&[concept("dog", 4)], &target, 5, SeedPath::root(0)).is_err());
    }

    #[test]
    fn type_token_examples() {
        let r = type_token_ratio(&[vec!["a", "b", "c"]]).unwrap();
        assert_eq!(r.per_document, vec![1.0]);
        let r = type_token_ratio(&[vec!["a", "a", "a", "a"]]).unwrap();
        assert_eq!(r.mean, 0.25);
        assert!(matches!(type_token_ratio::<&str>(&[vec![]]), Err(Error::EmptyDocument(0))));
    }

    #[test]
    fn type_token_matches_recount() {
        use rand::Rng;
        let mut rng = SeedPath::root(10).rng();
        let docs: Vec<Vec<String>> = (0..10)
            .map(|_| {
                let len = rng.random_range(1..60);
                (0..len).map(|_| format!("w{}", rng.random_range(0..25))).collect()
            })
            .collect();
        let r = type_token_ratio(&docs).unwrap();
        // naive recount: sort + dedup instead of hashing
        let mut total = 0.0;
        for (doc, &ratio) in docs.iter().zip(&r.per_document) {
            let mut d = doc.clone();
            d.sort();
            d.dedup();
            let expected = d.len() as f64 / doc.len() as f64;
            assert_eq!(ratio, expected);
            total += expected;
        }
        assert!((r.mean - total / 10.0).abs() < 1e-15);
    }
}
