//! On-disk recordings: `<id>.json` header plus `<id>.bin` little-endian f32 channel-major payload.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{atomic_write, DataError};
use crate::domain::{Event, Recording};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub recording_id: String,
    pub subject_id: String,
    pub session_id: String,
    pub sfreq: f64,
    pub channels: Vec<String>,
    pub events: Vec<Event>,
    pub dtype: String,
    /// `[n_channels, n_samples]`
    pub shape: [usize; 2],
}

fn paths(dir: &Path, recording_id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{recording_id}.json")), dir.join(format!("{recording_id}.bin")))
}

pub fn write_recording(dir: &Path, rec: &Recording) -> Result<(), DataError> {
    rec.validate()?;
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let (json_path, bin_path) = paths(dir, &rec.recording_id);
    let header = RecordingHeader {
        recording_id: rec.recording_id.clone(),
        subject_id: rec.subject_id.clone(),
        session_id: rec.session_id.clone(),
        sfreq: rec.sfreq,
        channels: rec.channels.clone(),
        events: rec.events.clone(),
        dtype: "float32".into(),
        shape: [rec.n_channels(), rec.n_samples()],
    };
    let mut payload = Vec::with_capacity(rec.data.len() * 4);
    for v in rec.data.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(&bin_path, &payload)?;
    let text = serde_json::to_vec_pretty(&header).expect("headers serialize");
    atomic_write(&json_path, &text)
}

pub fn load_recording(dir: &Path, recording_id: &str) -> Result<Recording, DataError> {
    let (json_path, bin_path) = paths(dir, recording_id);
    for p in [&json_path, &bin_path] {
        if !p.exists() {
            return Err(DataError::MissingFile(p.clone()));
        }
    }
    let text = fs::read(&json_path).map_err(|e| DataError::io(&json_path, e))?;
    let header: RecordingHeader =
        serde_json::from_slice(&text).map_err(|e| DataError::Format(format!("{}: {e}", json_path.display())))?;
    if header.dtype != "float32" {
        return Err(DataError::Format(format!("unsupported dtype `{}`", header.dtype)));
    }
    let bytes = fs::read(&bin_path).map_err(|e| DataError::io(&bin_path, e))?;
    let [n_ch, n_s] = header.shape;
    let expected = n_ch * n_s * 4;
    if bytes.len() != expected {
        return Err(DataError::LengthMismatch { path: bin_path, expected, found: bytes.len() });
    }
    let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let data = Array2::from_shape_vec((n_ch, n_s), values).expect("length checked above");
    Ok(Recording::new(
        header.recording_id,
        header.subject_id,
        header.session_id,
        header.sfreq,
        header.channels,
        data,
        header.events,
    )?)
}

/// Recording ids present in `dir`, sorted.
pub fn list_recordings(dir: &Path) -> Result<Vec<String>, DataError> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DataError::io(dir, e))? {
        let path = entry.map_err(|e| DataError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainError;

    fn sample() -> Recording {
        let data = Array2::from_shape_fn((3, 40), |(c, t)| (c as f32) - (t as f32) * 0.25);
        Recording::new(
            "sub-01_ses-01",
            "sub-01",
            "ses-01",
            20.0,
            vec!["a".into(), "b".into(), "c".into()],
            data,
            vec![Event::new(0.5, "Stimulus", "class_0")],
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample();
        write_recording(dir.path(), &rec).unwrap();
        assert_eq!(load_recording(dir.path(), &rec.recording_id).unwrap(), rec);
        assert_eq!(list_recordings(dir.path()).unwrap(), vec![rec.recording_id.clone()]);
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample();
        write_recording(dir.path(), &rec).unwrap();
        let bin = dir.path().join("sub-01_ses-01.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_recording(dir.path(), &rec.recording_id), Err(DataError::LengthMismatch { .. })));
    }

    #[test]
    fn zero_sfreq_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample();
        write_recording(dir.path(), &rec).unwrap();
        let json = dir.path().join("sub-01_ses-01.json");
        let text = fs::read_to_string(&json).unwrap().replace("\"sfreq\": 20.0", "\"sfreq\": 0.0");
        fs::write(&json, text).unwrap();
        match load_recording(dir.path(), &rec.recording_id) {
            Err(DataError::Domain(DomainError::InvalidRecording { reason, .. })) => assert!(reason.contains("sfreq")),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_recording(dir.path(), "nope"), Err(DataError::MissingFile(_))));
    }
}
