// SPDX-License-Identifier: MIT OR Apache-2.0

//! # expertlens
//!
//! Expert-neuron discovery and representational-alignment analyses over
//! pooled activation dumps.
//!
//! A neuron's *expertise* for a concept is the average precision (AP) of its
//! pooled per-sentence activation used as a score for concept presence. The
//! crate scores every neuron of a dump, extracts expert sets by threshold or
//! top-k, and compares concepts through their expert sets: Jaccard overlap,
//! cosine and KL over AP vectors, alignment with human similarity tables,
//! domain cores, layer placement, training dynamics and intervention plans.
//!
//! Every stochastic step draws from a [`rng::SeedPath`] derived from one root
//! seed, so results are bit-reproducible and independent of thread count.
//!
//! ## Modules
//!
//! - [`corpus`]: ACTD dump format, concept manifests, human tables, negative sampling
//! - [`ap`]: per-neuron average precision and the `.apv` format
//! - [`experts`]: expert sets, set algebra, fold stability, checkpoint dynamics
//! - [`metrics`]: AP-space similarities, Spearman, bootstrap, permutation tests
//! - [`domains`]: shared domain cores, randomized baselines, concept graphs
//! - [`layers`]: per-layer expert distributions and AP histograms
//! - [`intervention`]: intervention plans and generation prevalence analysis
//! - [`synth`]: seeded synthetic worlds with planted ground truth
//! - [`pipeline`]: declarative run configuration and report bundle

pub mod ap;
pub mod corpus;
pub mod domains;
pub mod error;
pub mod experts;
pub mod intervention;
pub mod layers;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
