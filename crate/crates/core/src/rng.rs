// SPDX-License-Identifier: MIT OR Apache-2.0

//! Named, counter-derived random streams.
//!
//! All randomness descends from one root seed. A [`SeedPath`] is extended by
//! labels and integer coordinates (concept index, fold, replicate, ...) and
//! turned into a ChaCha20 stream (RFC 8439 constants). Mixing uses the
//! SplitMix64 finalizer, so any implementation with FNV-1a, SplitMix64 and
//! ChaCha20 can reproduce the same streams.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::fnv1a64;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function applied to `x + gamma`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A position in the seed derivation tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn root(seed: u64) -> Self {
        SeedPath(splitmix64(seed))
    }

    /// Child stream named by a label, e.g. `"folds"` or `"bootstrap"`.
    pub fn child(self, label: &str) -> Self {
        SeedPath(splitmix64(self.0 ^ fnv1a64(label.as_bytes())))
    }

    /// Child stream indexed by an integer coordinate.
    pub fn index(self, i: u64) -> Self {
        SeedPath(splitmix64(self.0 ^ splitmix64(i.wrapping_add(0xD1B5_4A32_D192_ED03))))
    }

    pub fn value(self) -> u64 {
        self.0
    }

    /// ChaCha20 generator keyed from this path.
    pub fn rng(self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        let mut state = self.0;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha20Rng::from_seed(key)
    }
}

/// Uniform double in the half-open interval (0, 1].
fn open_unit<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal deviate by the cosine branch of Box–Muller.
///
/// Consumes exactly two 64-bit draws per deviate so streams stay aligned
/// across implementations.
pub fn standard_normal<R: RngCore>(rng: &mut R) -> f64 {
    let u1 = open_unit(rng);
    let u2 = open_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `0..n` (n > 0).
pub fn below<R: Rng>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Uniform sample of `k` distinct indices from `0..n`, returned ascending.
pub fn sample_indices<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}
