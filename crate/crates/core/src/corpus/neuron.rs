// SPDX-License-Identifier: MIT OR Apache-2.0

//! Neuron addressing: `(layer, sublayer, unit)` coordinates and the flat
//! index used by dumps and AP vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::fnv1a64;
use crate::error::{Error, Result};

/// Which half of a transformer block a unit belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sublayer {
    /// Post-nonlinearity MLP hidden units.
    Mlp,
    /// Attention-block output units.
    Attn,
}

impl Sublayer {
    fn code(self) -> u8 {
        match self {
            Sublayer::Mlp => 0,
            Sublayer::Attn => 1,
        }
    }
}

impl fmt::Display for Sublayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sublayer::Mlp => "MLP",
            Sublayer::Attn => "ATTN",
        })
    }
}

/// Fully resolved neuron coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: u16,
    pub sublayer: Sublayer,
    pub unit: u32,
    pub flat: u64,
}

/// One contiguous block of units in the flat index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronBlock {
    pub layer: u16,
    pub sublayer: Sublayer,
    pub units: u32,
}

#[derive(Serialize, Deserialize)]
struct NeuronMapRepr {
    blocks: Vec<NeuronBlock>,
    n_neurons: u64,
}

/// Ordered list of blocks; a neuron's flat index is its block's prefix-sum
/// offset plus its unit index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "NeuronMapRepr", into = "NeuronMapRepr")]
pub struct NeuronMap {
    blocks: Vec<NeuronBlock>,
    // offsets[i] = first flat index of blocks[i]; offsets[len] = n_neurons
    offsets: Vec<u64>,
}

impl NeuronMap {
    pub fn new(blocks: Vec<NeuronBlock>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0u64;
        for b in &blocks {
            if b.units == 0 {
                return Err(Error::InvalidDump(format!(
                    "block ({}, {}) has zero units",
                    b.layer, b.sublayer
                )));
            }
            if !seen.insert((b.layer, b.sublayer)) {
                return Err(Error::InvalidDump(format!(
                    "block ({}, {}) declared twice",
                    b.layer, b.sublayer
                )));
            }
            offsets.push(acc);
            acc += u64::from(b.units);
        }
        offsets.push(acc);
        Ok(NeuronMap { blocks, offsets })
    }

    /// `n_layers` blocks of MLP then attention units, the usual
    /// decoder-only layout. Sublayers with zero units are left out.
    pub fn uniform(n_layers: u16, mlp_units: u32, attn_units: u32) -> Result<Self> {
        let mut blocks = Vec::with_capacity(2 * usize::from(n_layers));
        for layer in 0..n_layers {
            for (sublayer, units) in [(Sublayer::Mlp, mlp_units), (Sublayer::Attn, attn_units)] {
                if units > 0 {
                    blocks.push(NeuronBlock { layer, sublayer, units });
                }
            }
        }
        Self::new(blocks)
    }

    pub fn n_neurons(&self) -> u64 {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn blocks(&self) -> &[NeuronBlock] {
        &self.blocks
    }

    /// First flat index of block `i`.
    pub fn block_offset(&self, i: usize) -> u64 {
        self.offsets[i]
    }

    /// Index of the block containing `flat`.
    pub fn block_of(&self, flat: u64) -> Option<usize> {
        if flat >= self.n_neurons() {
            return None;
        }
        Some(self.offsets.partition_point(|&o| o <= flat) - 1)
    }

    pub fn locate(&self, flat: u64) -> Option<NeuronId> {
        let i = self.block_of(flat)?;
        let b = self.blocks[i];
        Some(NeuronId {
            layer: b.layer,
            sublayer: b.sublayer,
            unit: (flat - self.offsets[i]) as u32,
            flat,
        })
    }

    pub fn flat_index(&self, layer: u16, sublayer: Sublayer, unit: u32) -> Option<u64> {
        self.blocks
            .iter()
            .position(|b| b.layer == layer && b.sublayer == sublayer)
            .filter(|&i| unit < self.blocks[i].units)
            .map(|i| self.offsets[i] + u64::from(unit))
    }

    /// FNV-1a over the canonical block list; identifies an architecture
    /// layout for plan/model matching.
    pub fn layout_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.blocks.len() * 7);
        for b in &self.blocks {
            bytes.extend_from_slice(&b.layer.to_le_bytes());
            bytes.push(b.sublayer.code());
            bytes.extend_from_slice(&b.units.to_le_bytes());
        }
        fnv1a64(&bytes)
    }
}

impl TryFrom<NeuronMapRepr> for NeuronMap {
    type Error = Error;

    fn try_from(repr: NeuronMapRepr) -> Result<Self> {
        let map = NeuronMap::new(repr.blocks)?;
        if map.n_neurons() != repr.n_neurons {
            return Err(Error::InvalidDump(format!(
                "neuron map declares {} neurons but blocks sum to {}",
                repr.n_neurons,
                map.n_neurons()
            )));
        }
        Ok(map)
    }
}

impl From<NeuronMap> for NeuronMapRepr {
    fn from(map: NeuronMap) -> Self {
        NeuronMapRepr {
            n_neurons: map.n_neurons(),
            blocks: map.blocks,
        }
    }
}
