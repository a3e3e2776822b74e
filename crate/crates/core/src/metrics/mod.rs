// SPDX-License-Identifier: MIT OR Apache-2.0

//! Similarity measures and the statistics toolbox.

pub mod alignment;
pub mod contrasts;
pub mod similarity;
pub mod stats;

pub use alignment::{align_with_humans, AlignmentConfig, AlignmentReport, MissingPairPolicy, SimilarityMethod, SimilarityRecord};
pub use contrasts::{compare_adjacent_levels, sliding_difference_contrasts, ContrastMatrix, LevelContrast};
pub use similarity::{ap_cosine, embedding_cosine, negadj_cosine, symmetric_kl, NegAdjForm, KL_EPSILON};
pub use stats::{bootstrap_ci, bootstrap_mean_ci, pearson, permutation_test, rank_average, spearman, BootstrapConfig, Ci};
