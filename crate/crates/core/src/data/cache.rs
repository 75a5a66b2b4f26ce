//! Binary cache of prepared example sets.
//!
//! Layout: `NBCH`, format version (u32 LE), header length (u64 LE), JSON header,
//! payload blocks, CRC-32C (u32 LE) of everything before it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{atomic_write, DataError};
use crate::domain::{ExampleSet, SplitLabel, Target};

pub const MAGIC: &[u8; 4] = b"NBCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub dtype: String,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    /// `[n_examples, n_channels, n_times]`
    pub shape: [usize; 3],
    pub sfreq: f64,
    pub window_start: f64,
    pub duration: f64,
    pub example_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    pub session_ids: Vec<String>,
    pub run_ids: Vec<String>,
    pub concept_ids: Vec<Option<String>>,
    pub descriptions: Vec<String>,
    pub split_labels: Vec<Option<SplitLabel>>,
    pub targets: Vec<Target>,
    pub blocks: Vec<BlockInfo>,
    /// Free-form preparation metadata (not part of the example set).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

pub fn encode_cache(es: &ExampleSet) -> Vec<u8> {
    encode_cache_with_meta(es, BTreeMap::new())
}

pub fn encode_cache_with_meta(es: &ExampleSet, meta: BTreeMap<String, serde_json::Value>) -> Vec<u8> {
    let windows_len = (es.windows.len() * 4) as u64;
    let header = CacheHeader {
        shape: [es.len(), es.n_channels(), es.n_times()],
        sfreq: es.sfreq,
        window_start: es.window_start,
        duration: es.duration,
        example_ids: es.example_ids.clone(),
        subject_ids: es.subject_ids.clone(),
        session_ids: es.session_ids.clone(),
        run_ids: es.run_ids.clone(),
        concept_ids: es.concept_ids.clone(),
        descriptions: es.descriptions.clone(),
        split_labels: es.split_labels.clone(),
        targets: es.targets.clone(),
        blocks: vec![BlockInfo { name: "windows".into(), dtype: "float32".into(), offset: 0, len: windows_len }],
        meta,
    };
    let header_bytes = serde_json::to_vec(&header).expect("cache headers serialize");
    let mut out = Vec::with_capacity(20 + header_bytes.len() + windows_len as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for v in es.windows.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32c::crc32c(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_cache(bytes: &[u8]) -> Result<ExampleSet, DataError> {
    decode_cache_with_meta(bytes).map(|(es, _)| es)
}

pub fn decode_cache_with_meta(bytes: &[u8]) -> Result<(ExampleSet, BTreeMap<String, serde_json::Value>), DataError> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(DataError::Format("not a cache file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(DataError::CacheVersion { found: version, supported: FORMAT_VERSION });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32c::crc32c(body);
    if stored != computed {
        return Err(DataError::Checksum { stored, computed });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| DataError::Format("header length exceeds file".into()))?;
    let header: CacheHeader =
        serde_json::from_slice(&body[16..header_end]).map_err(|e| DataError::Format(format!("cache header: {e}")))?;
    let payload = &body[header_end..];
    let block = header
        .blocks
        .iter()
        .find(|b| b.name == "windows")
        .ok_or_else(|| DataError::Format("no windows block".into()))?;
    let [n, c, t] = header.shape;
    let (start, len) = (block.offset as usize, block.len as usize);
    if len != n * c * t * 4 || start + len > payload.len() {
        return Err(DataError::Format("windows block does not match the declared shape".into()));
    }
    let values: Vec<f32> = payload[start..start + len]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let es = ExampleSet {
        windows: Array3::from_shape_vec((n, c, t), values).expect("length checked above"),
        targets: header.targets,
        example_ids: header.example_ids,
        subject_ids: header.subject_ids,
        session_ids: header.session_ids,
        run_ids: header.run_ids,
        concept_ids: header.concept_ids,
        descriptions: header.descriptions,
        split_labels: header.split_labels,
        sfreq: header.sfreq,
        window_start: header.window_start,
        duration: header.duration,
    };
    Ok((es, header.meta))
}

/// Writes atomically (temp file, then rename).
pub fn write_cache(es: &ExampleSet, path: &Path) -> Result<(), DataError> {
    write_cache_with_meta(es, BTreeMap::new(), path)
}

pub fn write_cache_with_meta(
    es: &ExampleSet,
    meta: BTreeMap<String, serde_json::Value>,
    path: &Path,
) -> Result<(), DataError> {
    let violations = crate::domain::validate_example_set(es);
    if !violations.is_empty() {
        return Err(DataError::Format(format!("refusing to cache an invalid set: {}", violations.join("; "))));
    }
    atomic_write(path, &encode_cache_with_meta(es, meta))
}

pub fn read_cache(path: &Path) -> Result<ExampleSet, DataError> {
    read_cache_with_meta(path).map(|(es, _)| es)
}

pub fn read_cache_with_meta(path: &Path) -> Result<(ExampleSet, BTreeMap<String, serde_json::Value>), DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_cache_with_meta(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample() -> ExampleSet {
        let mut es = ExampleSet::empty(2, 3, 120.0, -0.2, 0.025);
        es.windows = Array3::from_shape_fn((2, 2, 3), |(e, c, t)| (e * 6 + c * 3 + t) as f32 * 0.1 - 0.3);
        es.targets = vec![Target::Embedding(vec![0.1, 1e-300]), Target::Embedding(vec![-2.5, std::f64::consts::PI])];
        es.example_ids = vec!["r/00000".into(), "r/00001".into()];
        es.subject_ids = vec!["s1".into(), "s2".into()];
        es.session_ids = vec!["ses-01".into(); 2];
        es.run_ids = vec![String::new(), "run-02".into()];
        es.concept_ids = vec![Some("c0001".into()), None];
        es.descriptions = vec!["c0001".into(), "x".into()];
        es.split_labels = vec![Some(SplitLabel::Train), Some(SplitLabel::Test)];
        es
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.nbc");
        let es = sample();
        write_cache(&es, &p).unwrap();
        assert_eq!(read_cache(&p).unwrap(), es);
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = encode_cache(&sample());
        let i = bytes.len() - 10;
        bytes[i] ^= 0x01;
        assert!(matches!(decode_cache(&bytes), Err(DataError::Checksum { .. })));
    }

    #[test]
    fn newer_version_names_both() {
        let mut bytes = encode_cache(&sample());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let err = decode_cache(&bytes).unwrap_err();
        assert_eq!(err, DataError::CacheVersion { found: 2, supported: 1 });
        let msg = err.to_string();
        assert!(msg.contains('2') && msg.contains('1'), "{msg}");
    }
}
