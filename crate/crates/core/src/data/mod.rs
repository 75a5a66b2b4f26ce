//! Recording sources, epoching, and the prepared-example cache.

pub mod cache;
pub mod epoching;
pub mod recording_io;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{SourceSpec, TaskSpec};
use crate::domain::{canonical_json, hash_config, DomainError, ExampleSet, ObjectiveKind, Recording};
use crate::dsp::{self, DspError};

pub use cache::{read_cache, write_cache};
pub use epoching::{epoch, EpochStats, TargetEncoder};
pub use recording_io::{list_recordings, load_recording, write_recording};
pub use synthetic::{generate_synthetic, profile_by_name, Effect, SyntheticProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: payload has {found} bytes, header implies {expected}")]
    LengthMismatch { path: PathBuf, expected: usize, found: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("format error: {0}")]
    Format(String),
    #[error("cache format version {found} is not supported (this build reads version {supported})")]
    CacheVersion { found: u32, supported: u32 },
    #[error("cache checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("recording {recording}: no `{event_type}` events")]
    NoEvents { recording: String, event_type: String },
    #[error("event at {onset} s: {reason}")]
    Target { onset: f64, reason: String },
    #[error("task {task} declares {declared} outputs but the targets have {found}")]
    TargetDim { task: String, declared: usize, found: usize },
    #[error("unknown data source `{0}`")]
    UnknownSource(String),
    #[error("synthetic profile {name}: {reason}")]
    InvalidProfile { name: String, reason: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> DataError {
        DataError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

/// Writes to a sibling temp file, syncs, then renames over `path`.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.{nanos}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| DataError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(&tmp, e))?;
    f.sync_all().map_err(|e| DataError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| DataError::io(path, e))
}

/// Recordings of a source plus, for synthetic retrieval profiles, their embedding table.
pub struct Loaded {
    pub recordings: Vec<Recording>,
    pub embeddings: Option<BTreeMap<String, Vec<f64>>>,
}

/// Generates a synthetic source or reads `<root>/<dataset_id>/` from disk.
pub fn load_source(source: &SourceSpec, data_root: Option<&Path>) -> Result<Loaded, DataError> {
    if source.is_synthetic() {
        let profile = profile_by_name(&source.name)?;
        let recordings = generate_synthetic(&profile)?;
        let embeddings =
            (profile.objective == ObjectiveKind::Retrieval).then(|| synthetic::embedding_table(&profile));
        return Ok(Loaded { recordings, embeddings });
    }
    let dir = match (&source.root, data_root) {
        (Some(r), _) => r.join(source.dataset_id()),
        (None, Some(r)) => r.join(source.dataset_id()),
        (None, None) => return Err(DataError::UnknownSource(source.name.clone())),
    };
    if !dir.is_dir() {
        return Err(DataError::MissingFile(dir));
    }
    let recordings = list_recordings(&dir)?
        .iter()
        .map(|id| load_recording(&dir, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Loaded { recordings, embeddings: None })
}

/// Outcome of preparing one (task, dataset) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub examples: ExampleSet,
    pub n_outputs: usize,
    pub matched: usize,
    pub dropped: usize,
    pub cache_path: Option<PathBuf>,
}

/// Preprocesses every recording, epochs, baseline-corrects and concatenates.
pub fn prepare_examples(spec: &TaskSpec, source: &SourceSpec, data_root: Option<&Path>) -> Result<Prepared, DataError> {
    let loaded = load_source(source, data_root)?;
    let encoder = TargetEncoder::fit(spec, &loaded.recordings, loaded.embeddings.as_ref())?;
    let parts: Vec<(ExampleSet, EpochStats)> = loaded
        .recordings
        .par_iter()
        .map(|rec| -> Result<_, DataError> {
            let (clean, _) = dsp::preprocess(rec, &spec.preproc)?;
            let (mut es, stats) = epoch(&clean, spec, &encoder)?;
            if let Some(b) = spec.baseline {
                es = dsp::baseline_correct(&es, b)?;
            }
            Ok((es, stats))
        })
        .collect::<Result<_, _>>()?;
    let matched = parts.iter().map(|(_, s)| s.matched).sum();
    let dropped = parts.iter().map(|(_, s)| s.dropped).sum();
    let sets: Vec<ExampleSet> = parts.into_iter().map(|(es, _)| es).collect();
    let examples = ExampleSet::concat(&sets).ok_or_else(|| DataError::Format("no recordings".into()))?;
    Ok(Prepared { examples, n_outputs: encoder.n_outputs(), matched, dropped, cache_path: None })
}

#[derive(Serialize)]
struct CacheKey<'a> {
    format: u32,
    source: &'a SourceSpec,
    preproc: &'a crate::config::PreprocSpec,
    trigger: &'a str,
    start: f64,
    duration: f64,
    baseline: Option<[f64; 2]>,
    target: &'a crate::config::TargetCodec,
    objective: ObjectiveKind,
    n_outputs: Option<usize>,
}

/// Hash of everything that determines the prepared windows and targets.
pub fn preparation_hash(spec: &TaskSpec, source: &SourceSpec) -> u64 {
    hash_config(&canonical_json(&CacheKey {
        format: cache::FORMAT_VERSION,
        source,
        preproc: &spec.preproc,
        trigger: &spec.trigger_event_type,
        start: spec.start,
        duration: spec.duration,
        baseline: spec.baseline,
        target: &spec.target,
        objective: spec.objective,
        n_outputs: spec.n_outputs,
    }))
}

pub fn cache_path(cache_dir: &Path, spec: &TaskSpec, source: &SourceSpec) -> PathBuf {
    cache_dir
        .join(source.dataset_id())
        .join(format!("{}-{:016x}.nbc", spec.task_id, preparation_hash(spec, source)))
}

/// Like [`prepare_examples`], reusing or filling the cache under `cache_dir`.
pub fn prepare_cached(
    spec: &TaskSpec,
    source: &SourceSpec,
    data_root: Option<&Path>,
    cache_dir: &Path,
) -> Result<Prepared, DataError> {
    let path = cache_path(cache_dir, spec, source);
    if path.exists() {
        match cache::read_cache_with_meta(&path) {
            Ok((examples, meta)) => {
                let get = |k: &str| meta.get(k).and_then(|v| v.as_u64()).map(|v| v as usize);
                if let Some(n_outputs) = get("n_outputs") {
                    return Ok(Prepared {
                        examples,
                        n_outputs,
                        matched: get("matched").unwrap_or(0),
                        dropped: get("dropped").unwrap_or(0),
                        cache_path: Some(path),
                    });
                }
            }
            Err(e) => log::warn!("{}: {e}; rebuilding", path.display()),
        }
    }
    let mut prepared = prepare_examples(spec, source, data_root)?;
    let meta = BTreeMap::from([
        ("n_outputs".to_string(), serde_json::json!(prepared.n_outputs)),
        ("matched".to_string(), serde_json::json!(prepared.matched)),
        ("dropped".to_string(), serde_json::json!(prepared.dropped)),
    ]);
    cache::write_cache_with_meta(&prepared.examples, meta, &path)?;
    prepared.cache_path = Some(path);
    Ok(prepared)
}
