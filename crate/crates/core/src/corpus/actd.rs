// SPDX-License-Identifier: MIT OR Apache-2.0

//! ACTD activation dump files.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "ACTD"
//!      4     4  version u32 = 1
//!      8     8  n_sentences u64
//!     16     8  n_neurons u64
//!     24     1  dtype u8 (0 = f32)
//!     25     1  pooling u8 (0 = MAX, 1 = MEAN)
//!     26     2  reserved u16 = 0
//!     28     -  n_sentences * n_neurons f32, sentence-major
//! ```
//!
//! Labels, neuron map and sentence IDs live in the JSON sidecar
//! `<stem>.manifest.json` next to the binary file.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::neuron::NeuronMap;
use super::{write_atomic, Pooling, SentenceId};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ACTD";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 28;
const DTYPE_F32: u8 = 0;

/// Pooled activations of one model checkpoint: one row per sentence, one
/// column per flat neuron index.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationDump {
    model: String,
    checkpoint: String,
    pooling: Pooling,
    map: NeuronMap,
    sentence_ids: Vec<SentenceId>,
    values: Vec<f32>,
    metadata: BTreeMap<String, String>,
    row_of: HashMap<SentenceId, usize>,
}

impl ActivationDump {
    /// Checks shape and sentence-ID uniqueness. Finiteness is checked by
    /// [`ActivationDump::validate`] and on every write/read.
    pub fn new(
        model: impl Into<String>,
        checkpoint: impl Into<String>,
        pooling: Pooling,
        map: NeuronMap,
        sentence_ids: Vec<SentenceId>,
        values: Vec<f32>,
    ) -> Result<Self> {
        let n_neurons = map.n_neurons() as usize;
        let expected = sentence_ids.len().checked_mul(n_neurons).ok_or_else(|| {
            Error::InvalidDump("matrix size overflows usize".into())
        })?;
        if values.len() != expected {
            return Err(Error::InvalidDump(format!(
                "{} sentences x {} neurons needs {} values, got {}",
                sentence_ids.len(),
                n_neurons,
                expected,
                values.len()
            )));
        }
        let mut row_of = HashMap::with_capacity(sentence_ids.len());
        for (i, &id) in sentence_ids.iter().enumerate() {
            if row_of.insert(id, i).is_some() {
                return Err(Error::InvalidDump(format!("duplicate sentence id {id}")));
            }
        }
        Ok(ActivationDump {
            model: model.into(),
            checkpoint: checkpoint.into(),
            pooling,
            map,
            sentence_ids,
            values,
            metadata: BTreeMap::new(),
            row_of,
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn checkpoint(&self) -> &str {
        &self.checkpoint
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn map(&self) -> &NeuronMap {
        &self.map
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_ids.len()
    }

    pub fn n_neurons(&self) -> usize {
        self.map.n_neurons() as usize
    }

    pub fn sentence_ids(&self) -> &[SentenceId] {
        &self.sentence_ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn row(&self, sentence: usize) -> &[f32] {
        let n = self.n_neurons();
        &self.values[sentence * n..(sentence + 1) * n]
    }

    pub fn value(&self, sentence: usize, neuron: usize) -> f32 {
        self.values[sentence * self.n_neurons() + neuron]
    }

    pub fn row_index(&self, id: SentenceId) -> Option<usize> {
        self.row_of.get(&id).copied()
    }

    /// Row indices for `ids`, in order.
    pub fn rows_for(&self, ids: &[SentenceId]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|&id| self.row_index(id).ok_or(Error::MissingSentence(id)))
            .collect()
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        let n = self.n_neurons().max(1);
        self.values
            .iter()
            .position(|v| !v.is_finite())
            .map(|i| (i / n, i % n))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((sentence, neuron)) = self.first_non_finite() {
            return Err(Error::NonFinite { sentence, neuron });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DumpSidecar {
    format: String,
    model: String,
    checkpoint: String,
    pooling: Pooling,
    neuron_map: NeuronMap,
    sentence_ids: Vec<SentenceId>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// `<dir>/<stem>.manifest.json` for `<dir>/<stem>.<ext>`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

fn encode_header(dump: &ActivationDump) -> [u8; HEADER_LEN as usize] {
    let mut h = [0u8; HEADER_LEN as usize];
    h[0..4].copy_from_slice(MAGIC);
    h[4..8].copy_from_slice(&VERSION.to_le_bytes());
    h[8..16].copy_from_slice(&(dump.n_sentences() as u64).to_le_bytes());
    h[16..24].copy_from_slice(&(dump.n_neurons() as u64).to_le_bytes());
    h[24] = DTYPE_F32;
    h[25] = dump.pooling.code();
    // 26..28 reserved, zero
    h
}

/// Writes the binary file and its JSON sidecar; returns the binary file's
/// byte count.
pub fn write_activation_dump(dump: &ActivationDump, path: &Path) -> Result<u64> {
    dump.validate()?;
    let header = encode_header(dump);
    write_atomic(path, |w| {
        let mut w = BufWriter::with_capacity(1 << 20, w);
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(4 * 8192);
        for chunk in dump.values.chunks(8192) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    })?;

    let sidecar = DumpSidecar {
        format: "ACTD/1".into(),
        model: dump.model.clone(),
        checkpoint: dump.checkpoint.clone(),
        pooling: dump.pooling,
        neuron_map: dump.map.clone(),
        sentence_ids: dump.sentence_ids.clone(),
        metadata: dump.metadata.clone(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::json("dump sidecar", e))?;
    let side = sidecar_path(path);
    write_atomic(&side, |w| w.write_all(&json))?;

    Ok(HEADER_LEN + 4 * dump.values.len() as u64)
}

struct Header {
    n_sentences: u64,
    n_neurons: u64,
    pooling: Pooling,
}

fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN as usize {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: "ACTD".into(),
            found: String::from_utf8_lossy(&bytes[0..4]).into_owned(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    if bytes[24] != DTYPE_F32 {
        return Err(Error::InvalidDump(format!("unsupported dtype code {}", bytes[24])));
    }
    let pooling = Pooling::from_code(bytes[25])
        .ok_or_else(|| Error::InvalidDump(format!("unknown pooling code {}", bytes[25])))?;
    if bytes[26] != 0 || bytes[27] != 0 {
        return Err(Error::InvalidDump("reserved header bytes are not zero".into()));
    }
    Ok(Header {
        n_sentences: u64_at(8),
        n_neurons: u64_at(16),
        pooling,
    })
}

/// Reads a dump written by [`write_activation_dump`], validating the header
/// against the payload length and the sidecar.
pub fn read_activation_dump(path: &Path) -> Result<ActivationDump> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);

    let mut head = vec![0u8; HEADER_LEN.min(actual) as usize];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    let header = decode_header(&head)?;

    let expected = header
        .n_sentences
        .checked_mul(header.n_neurons)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::InvalidDump("declared dimensions overflow".into()))?;
    if expected != actual {
        return Err(Error::Truncated { expected, actual });
    }

    let n_values = (header.n_sentences * header.n_neurons) as usize;
    let mut values = Vec::with_capacity(n_values);
    let mut buf = vec![0u8; 4 * 8192];
    let mut remaining = n_values;
    while remaining > 0 {
        let take = remaining.min(8192);
        let bytes = &mut buf[..4 * take];
        r.read_exact(bytes).map_err(|e| Error::io(path, e))?;
        values.extend(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap())),
        );
        remaining -= take;
    }

    let side = sidecar_path(path);
    let text = std::fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: DumpSidecar =
        serde_json::from_slice(&text).map_err(|e| Error::json(side.display().to_string(), e))?;

    if sidecar.neuron_map.n_neurons() != header.n_neurons {
        return Err(Error::InvalidDump(format!(
            "header declares {} neurons, neuron map has {}",
            header.n_neurons,
            sidecar.neuron_map.n_neurons()
        )));
    }
    if sidecar.sentence_ids.len() as u64 != header.n_sentences {
        return Err(Error::InvalidDump(format!(
            "header declares {} sentences, sidecar lists {}",
            header.n_sentences,
            sidecar.sentence_ids.len()
        )));
    }
    if sidecar.pooling != header.pooling {
        return Err(Error::InvalidDump("pooling differs between header and sidecar".into()));
    }

    let mut dump = ActivationDump::new(
        sidecar.model,
        sidecar.checkpoint,
        header.pooling,
        sidecar.neuron_map,
        sidecar.sentence_ids,
        values,
    )?;
    dump.metadata = sidecar.metadata;
    dump.validate()?;
    Ok(dump)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::neuron::NeuronMap;
    use crate::rng::{standard_normal, SeedPath};

    fn ids(n: usize) -> Vec<SentenceId> {
        (0..n).map(|i| SentenceId::from_text(&format!("sentence {i}"))).collect()
    }

    fn zeros() -> ActivationDump {
        let map = NeuronMap::uniform(1, 2, 1).unwrap();
        ActivationDump::new("m", "c", Pooling::Max, map, ids(2), vec![0.0; 6]).unwrap()
    }

    #[test]
    fn zero_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.actd");
        let dump = zeros();
        let n = write_activation_dump(&dump, &path).unwrap();
        assert_eq!(n, HEADER_LEN + 24);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 52);
        assert!(dir.path().join("z.manifest.json").exists());
        assert_eq!(read_activation_dump(&path).unwrap(), dump);
    }

    #[test]
    fn nan_names_its_coordinate() {
        let dir = tempfile::tempdir().unwrap();
        let mut dump = zeros();
        dump.values_mut()[1] = f32::NAN;
        match write_activation_dump(&dump, &dir.path().join("n.actd")) {
            Err(Error::NonFinite { sentence, neuron }) => assert_eq!((sentence, neuron), (0, 1)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.actd");
        write_activation_dump(&zeros(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0..4].copy_from_slice(b"XXXX");
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_activation_dump(&path), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.actd");
        write_activation_dump(&zeros(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_activation_dump(&path), Err(Error::UnsupportedVersion(7))));
    }

    #[test]
    fn truncation_reports_expected_and_actual() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.actd");
        write_activation_dump(&zeros(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        match read_activation_dump(&path) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!(expected, bytes.len() as u64);
                assert_eq!(actual, bytes.len() as u64 - 4);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn seeded_large_dump_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.actd");
        let map = NeuronMap::uniform(5, 1600, 400).unwrap();
        let mut rng = SeedPath::root(11).rng();
        let values: Vec<f32> = (0..400 * 10_000)
            .map(|_| standard_normal(&mut rng) as f32)
            .collect();
        let dump = ActivationDump::new("m", "step1", Pooling::Mean, map, ids(400), values)
            .unwrap()
            .with_metadata("normalization", "whitespace-collapse");
        write_activation_dump(&dump, &path).unwrap();
        let back = read_activation_dump(&path).unwrap();
        let a: Vec<u8> = dump.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        let b: Vec<u8> = back.values().iter().flat_map(|v| v.to_le_bytes()).collect();
        assert!(a == b);
        assert_eq!(back, dump);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let map = NeuronMap::uniform(1, 2, 1).unwrap();
        assert!(ActivationDump::new("m", "c", Pooling::Max, map.clone(), ids(2), vec![0.0; 5]).is_err());
        let dup = vec![SentenceId(1), SentenceId(1)];
        assert!(ActivationDump::new("m", "c", Pooling::Max, map, dup, vec![0.0; 6]).is_err());
    }
}
