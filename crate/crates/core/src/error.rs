// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

use crate::corpus::SentenceId;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("table error in {context}: {message}")]
    Table { context: String, message: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("payload size mismatch: header declares {expected} bytes, file has {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("non-finite activation at (sentence {sentence}, neuron {neuron})")]
    NonFinite { sentence: usize, neuron: usize },

    #[error("invalid dump: {0}")]
    InvalidDump(String),

    #[error("invalid manifest: {0}")]
    InvalidManifest(String),

    #[error("invalid human similarity table: {0}")]
    InvalidTable(String),

    #[error("sentence {0} not present in activation dump")]
    MissingSentence(SentenceId),

    #[error("concept {concept:?} needs at least one positive and one negative sentence (got {n_pos}/{n_neg})")]
    MissingClass {
        concept: String,
        n_pos: usize,
        n_neg: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient pool: need {needed}, only {available} available")]
    InsufficientPool { needed: usize, available: usize },

    #[error("target concept {0:?} is present in its own negative pool")]
    TargetInPool(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("zero rank variance")]
    ZeroVariance,

    #[error("neuron map mismatch: {0}")]
    MapMismatch(String),

    #[error("inconsistent inputs: {0}")]
    Inconsistent(String),

    #[error("document {0} is empty")]
    EmptyDocument(usize),

    #[error("neuron id {id} out of range for map with {n_neurons} neurons")]
    NeuronOutOfRange { id: u64, n_neurons: u64 },

    #[error("every candidate word occurs in the positive documents")]
    AllWordsFiltered,

    #[error("configuration invalid: {}", .0.join("; "))]
    Validation(Vec<String>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Whether this error stems from invalid inputs or configuration rather
    /// than from an analysis step.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::Table { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::Truncated { .. }
                | Error::NonFinite { .. }
                | Error::InvalidDump(_)
                | Error::InvalidManifest(_)
                | Error::InvalidTable(_)
        )
    }
}
