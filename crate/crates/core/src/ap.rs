// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-neuron expertise scores.
//!
//! A neuron's pooled activation over the positive and negative sentences of
//! a concept is used as a classifier score; its expertise is the average
//! precision (AP) of that ranking. Ties are broken pessimistically:
//! negatives rank before positives at equal score, then by ascending
//! sentence position. AP is accumulated in `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, write_json, read_json, ActivationDump, ConceptManifest, Label, NeuronMap, Pooling};
use crate::error::{Error, Result};

/// Neurons per transposition block in [`score_rows`].
const BLOCK: usize = 64;

/// Reduces one neuron's per-token activations for one sentence.
pub fn pool_tokens(tokens: &[f32], mode: Pooling) -> Result<f32> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty token list".into()));
    }
    if let Some(i) = tokens.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite token activation at {i}")));
    }
    Ok(match mode {
        Pooling::Max => tokens.iter().copied().fold(f32::NEG_INFINITY, f32::max),
        Pooling::Mean => (tokens.iter().map(|&v| f64::from(v)).sum::<f64>() / tokens.len() as f64) as f32,
    })
}

/// Ranks `items` (score, is_positive, position) and sums precision at every
/// positive.
fn ap_kernel(items: &mut [(f64, bool, u32)], n_pos: usize) -> f64 {
    items.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("scores are finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut tp = 0u32;
    let mut total = 0.0f64;
    for (rank, item) in items.iter().enumerate() {
        if item.1 {
            tp += 1;
            total += f64::from(tp) / (rank + 1) as f64;
        }
    }
    total / n_pos as f64
}

/// Average precision of `scores` as a predictor of `labels`.
pub fn average_precision<S>(scores: &[S], labels: &[bool]) -> Result<f64>
where
    S: Copy + Into<f64>,
{
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::MissingClass {
            concept: String::new(),
            n_pos,
            n_neg: labels.len() - n_pos,
        });
    }
    let mut items = Vec::with_capacity(scores.len());
    for (i, (&s, &l)) in scores.iter().zip(labels).enumerate() {
        let s: f64 = s.into();
        if !s.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite score at {i}")));
        }
        items.push((s, l, i as u32));
    }
    Ok(ap_kernel(&mut items, n_pos))
}

/// AP of every neuron over the dump rows `rows` labelled by `labels`.
///
/// Neurons are processed in blocks: each block's columns are gathered from
/// the sentence-major matrix into a contiguous buffer, then ranked one by
/// one. Each output slot depends only on its own column, so the result does
/// not depend on the thread count.
pub fn score_rows(dump: &ActivationDump, rows: &[usize], labels: &[bool]) -> Result<Vec<f32>> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::MissingClass {
            concept: String::new(),
            n_pos,
            n_neg: labels.len() - n_pos,
        });
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= dump.n_sentences()) {
        return Err(Error::InvalidArgument(format!("row {r} out of range")));
    }
    let n_neurons = dump.n_neurons();
    let n_rows = rows.len();
    let mut out = vec![0.0f32; n_neurons];

    out.par_chunks_mut(BLOCK)
        .enumerate()
        .for_each_init(
            || (Vec::<f32>::new(), Vec::<(f64, bool, u32)>::with_capacity(n_rows)),
            |(columns, items), (block, slots)| {
                let start = block * BLOCK;
                let width = slots.len();
                columns.resize(width * n_rows, 0.0);
                for (ri, &row) in rows.iter().enumerate() {
                    let src = &dump.row(row)[start..start + width];
                    for (j, &v) in src.iter().enumerate() {
                        columns[j * n_rows + ri] = v;
                    }
                }
                for (j, slot) in slots.iter_mut().enumerate() {
                    items.clear();
                    items.extend(
                        columns[j * n_rows..(j + 1) * n_rows]
                            .iter()
                            .zip(labels)
                            .enumerate()
                            .map(|(i, (&v, &l))| (f64::from(v), l, i as u32)),
                    );
                    *slot = ap_kernel(items, n_pos) as f32;
                }
            },
        );
    Ok(out)
}

/// Dense AP scores for one (concept, checkpoint), indexed by flat neuron id.
#[derive(Debug, Clone, PartialEq)]
pub struct ApVector {
    pub concept: String,
    pub checkpoint: String,
    pub pooling: Pooling,
    pub map: Arc<NeuronMap>,
    pub scores: Vec<f32>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl ApVector {
    pub fn new(
        concept: impl Into<String>,
        checkpoint: impl Into<String>,
        pooling: Pooling,
        map: Arc<NeuronMap>,
        scores: Vec<f32>,
        n_pos: usize,
        n_neg: usize,
    ) -> Result<Self> {
        if scores.len() as u64 != map.n_neurons() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: map.n_neurons() as usize,
            });
        }
        if let Some(i) = scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidArgument(format!("AP at {i} outside [0, 1]: {}", scores[i])));
        }
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::MissingClass {
                concept: concept.into(),
                n_pos,
                n_neg,
            });
        }
        Ok(ApVector {
            concept: concept.into(),
            checkpoint: checkpoint.into(),
            pooling,
            map,
            scores,
            n_pos,
            n_neg,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn map_hash(&self) -> u64 {
        self.map.layout_hash()
    }
}

/// Scores every neuron of `dump` for the concept defined by `manifest`,
/// using the manifest's entry order as sentence position.
pub fn score_all_neurons(dump: &ActivationDump, manifest: &ConceptManifest) -> Result<ApVector> {
    manifest.validate()?;
    manifest.require_both_classes()?;
    let mut rows = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        rows.push(dump.row_index(e.id).ok_or(Error::MissingSentence(e.id))?);
        labels.push(e.label == Label::Positive);
    }
    let scores = score_rows(dump, &rows, &labels)?;
    let (n_pos, n_neg) = manifest.counts();
    ApVector::new(
        manifest.concept.clone(),
        dump.checkpoint(),
        dump.pooling(),
        Arc::new(dump.map().clone()),
        scores,
        n_pos,
        n_neg,
    )
}

const APV_MAGIC: &[u8; 4] = b"APV1";

#[derive(Serialize, Deserialize)]
struct ApvSidecar {
    concept: String,
    checkpoint: String,
    n_pos: usize,
    n_neg: usize,
    pooling: Pooling,
    map_hash: String,
    neuron_map: NeuronMap,
}

fn apv_sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".json");
    path.with_file_name(name)
}

/// Writes `magic APV1 | u64 n_neurons | f32[n]` plus `<path>.json`.
pub fn write_apv(ap: &ApVector, path: &Path) -> Result<()> {
    write_atomic(path, |f| {
        let mut w = BufWriter::new(f);
        w.write_all(APV_MAGIC)?;
        w.write_all(&(ap.scores.len() as u64).to_le_bytes())?;
        for s in &ap.scores {
            w.write_all(&s.to_le_bytes())?;
        }
        w.flush()
    })?;
    let side = ApvSidecar {
        concept: ap.concept.clone(),
        checkpoint: ap.checkpoint.clone(),
        n_pos: ap.n_pos,
        n_neg: ap.n_neg,
        pooling: ap.pooling,
        map_hash: format!("{:016x}", ap.map_hash()),
        neuron_map: (*ap.map).clone(),
    };
    write_json(&apv_sidecar_path(path), &side)
}

pub fn read_apv(path: &Path) -> Result<ApVector> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..4] != APV_MAGIC {
        return Err(Error::BadMagic {
            expected: "APV1".into(),
            found: String::from_utf8_lossy(&head[..4]).into_owned(),
        });
    }
    let n = u64::from_le_bytes(head[4..12].try_into().unwrap());
    let expected = 12 + 4 * n;
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }
    let mut bytes = vec![0u8; 4 * n as usize];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let scores = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let side: ApvSidecar = read_json(&apv_sidecar_path(path))?;
    ApVector::new(
        side.concept,
        side.checkpoint,
        side.pooling,
        Arc::new(side.neuron_map),
        scores,
        side.n_pos,
        side.n_neg,
    )
}
