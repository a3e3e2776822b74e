// SPDX-License-Identifier: MIT OR Apache-2.0

//! Intervention plans (top-k experts clamped to their positive-set mean)
//! and analysis of generations produced with and without them.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::Once;

use serde::{Deserialize, Serialize};

use crate::ap::ApVector;
use crate::corpus::{csv_string, hex_u64, write_atomic, ActivationDump, ConceptManifest, Pooling, Sublayer};
use crate::error::{Error, Result};
use crate::experts::top_k_ranked;
use crate::metrics::permutation_test;
use crate::rng::SeedPath;

pub const DEFAULT_PLAN_K: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub layer: u16,
    pub sublayer: Sublayer,
    pub unit: u32,
    pub value: f64,
}

/// Units to clamp during generation, in AP rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub concept: String,
    pub checkpoint: String,
    #[serde(with = "hex_u64")]
    pub map_hash: u64,
    pub k: usize,
    pub pooling: Pooling,
    pub n_neurons: u64,
    pub entries: Vec<PlanEntry>,
}

fn check_provenance(ap: &ApVector, dump: &ActivationDump, manifest: &ConceptManifest) -> Result<()> {
    let mut problems = Vec::new();
    if ap.concept != manifest.concept {
        problems.push(format!("AP vector is for {:?}, manifest for {:?}", ap.concept, manifest.concept));
    }
    if ap.checkpoint != dump.checkpoint() {
        problems.push(format!("AP vector from checkpoint {:?}, dump {:?}", ap.checkpoint, dump.checkpoint()));
    }
    if ap.map_hash() != dump.map().layout_hash() {
        problems.push("AP vector and dump use different neuron maps".into());
    }
    if ap.pooling != dump.pooling() {
        problems.push(format!("AP vector pooled {:?}, dump {:?}", ap.pooling, dump.pooling()));
    }
    if ap.n_pos != manifest.counts().0 {
        problems.push(format!("AP vector has {} positives, manifest {}", ap.n_pos, manifest.counts().0));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Inconsistent(problems.join("; ")))
    }
}

/// Top-`k` experts of `ap` with the mean pooled activation over the
/// manifest's positive sentences as clamp value.
pub fn build_intervention_plan(
    ap: &ApVector,
    dump: &ActivationDump,
    manifest: &ConceptManifest,
    k: usize,
) -> Result<InterventionPlan> {
    check_provenance(ap, dump, manifest)?;
    manifest.require_both_classes()?;
    let rows = dump.rows_for(&manifest.positives())?;
    let ranked = top_k_ranked(ap, k)?;
    let map = dump.map();
    let entries = ranked
        .into_iter()
        .map(|flat| {
            let n = flat as usize;
            let value = rows.iter().map(|&r| f64::from(dump.value(r, n))).sum::<f64>() / rows.len() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    sentence: rows[0],
                    neuron: n,
                });
            }
            let id = map.locate(flat).expect("ranked ids are in range");
            Ok(PlanEntry {
                layer: id.layer,
                sublayer: id.sublayer,
                unit: id.unit,
                value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterventionPlan {
        concept: ap.concept.clone(),
        checkpoint: ap.checkpoint.clone(),
        map_hash: ap.map_hash(),
        k,
        pooling: ap.pooling,
        n_neurons: map.n_neurons(),
        entries,
    })
}

/// Candidates that occur in none of the positive documents, in input order.
pub fn filter_word_list<S: AsRef<str>>(candidates: &[String], positive_docs: &[Vec<S>]) -> Result<Vec<String>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("empty candidate word list".into()));
    }
    let seen: HashSet<&str> = positive_docs.iter().flatten().map(AsRef::as_ref).collect();
    let kept: Vec<String> = candidates.iter().filter(|w| !seen.contains(w.as_str())).cloned().collect();
    if kept.is_empty() {
        return Err(Error::AllWordsFiltered);
    }
    Ok(kept)
}

/// One lemma per line; blank lines ignored.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect()
}

pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

pub fn write_word_list(path: &Path, words: &[String]) -> Result<()> {
    write_atomic(path, |w| {
        for word in words {
            writeln!(w, "{word}")?;
        }
        Ok(())
    })
}

static FALLBACK_WARNING: Once = Once::new();

/// Lowercases and splits on anything that is not alphanumeric. No
/// lemmatisation or part-of-speech filtering.
pub fn fallback_tokenize(text: &str) -> Vec<String> {
    FALLBACK_WARNING.call_once(|| {
        log::warn!("using the fallback tokenizer: tokens are not lemmatised or filtered to content words");
    });
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceReport {
    pub concept: String,
    /// Mean per-generation percentage of tokens in the word list.
    pub baseline_prevalence: f64,
    pub intervened_prevalence: f64,
    /// intervened - baseline, in percentage points.
    pub delta: f64,
    pub p_value: f64,
    pub word_list_size: usize,
    pub n_baseline: usize,
    pub n_intervened: usize,
}

fn prevalences<S: AsRef<str>>(arm: &[Vec<S>], words: &HashSet<&str>, offset: usize) -> Result<Vec<f64>> {
    arm.iter()
        .enumerate()
        .map(|(i, tokens)| {
            if tokens.is_empty() {
                return Err(Error::EmptyDocument(offset + i));
            }
            let hits = tokens.iter().filter(|t| words.contains(t.as_ref())).count();
            Ok(100.0 * hits as f64 / tokens.len() as f64)
        })
        .collect()
}

/// Difference in word-list prevalence between intervened and baseline
/// generations with a two-sided permutation p-value over arm labels.
/// Generations are indexed baseline first, then intervened, in errors.
pub fn prevalence_delta<S: AsRef<str>>(
    concept: &str,
    baseline: &[Vec<S>],
    intervened: &[Vec<S>],
    words: &[String],
    n_perm: usize,
    seed: SeedPath,
) -> Result<PrevalenceReport> {
    if baseline.is_empty() || intervened.is_empty() {
        return Err(Error::InvalidArgument("both generation arms must be nonempty".into()));
    }
    if words.is_empty() {
        return Err(Error::InvalidArgument("empty word list".into()));
    }
    let set: HashSet<&str> = words.iter().map(String::as_str).collect();
    let base = prevalences(baseline, &set, 0)?;
    let inter = prevalences(intervened, &set, baseline.len())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (b, i) = (mean(&base), mean(&inter));
    Ok(PrevalenceReport {
        concept: concept.to_string(),
        baseline_prevalence: b,
        intervened_prevalence: i,
        delta: i - b,
        p_value: permutation_test(&inter, &base, n_perm, seed)?,
        word_list_size: set.len(),
        n_baseline: baseline.len(),
        n_intervened: intervened.len(),
    })
}

pub fn prevalence_csv(reports: &[PrevalenceReport]) -> Result<String> {
    csv_string(
        "prevalence csv",
        &["concept", "baseline", "intervened", "delta", "p", "words", "n_baseline", "n_intervened"],
        reports.iter().map(|r| {
            vec![
                r.concept.clone(),
                r.baseline_prevalence.to_string(),
                r.intervened_prevalence.to_string(),
                r.delta.to_string(),
                r.p_value.to_string(),
                r.word_list_size.to_string(),
                r.n_baseline.to_string(),
                r.n_intervened.to_string(),
            ]
        }),
    )
}
