//! Core data types shared by every stage of the benchmark.
//!
//! Signal arrays are stored as `f32`; every metric, loss and optimizer
//! accumulation downstream works in `f64`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("recording {id}: {reason}")]
    InvalidRecording { id: String, reason: String },
    #[error("invalid prediction: {0}")]
    InvalidPrediction(String),
    #[error("unknown objective kind `{0}`")]
    UnknownObjective(String),
}

/// A time-stamped annotation in a continuous recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Seconds from recording start.
    pub onset: f64,
    pub event_type: String,
    pub description: String,
    /// Stimulus identity, used by leave-concept-out splits and retrieval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_id: Option<String>,
    /// Acquisition run inside the recording, when the dataset has several.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl Event {
    pub fn new(onset: f64, event_type: impl Into<String>, description: impl Into<String>) -> Self {
        Event {
            onset,
            event_type: event_type.into(),
            description: description.into(),
            concept_id: None,
            run_id: None,
        }
    }

    pub fn with_concept(mut self, concept: impl Into<String>) -> Self {
        self.concept_id = Some(concept.into());
        self
    }

    pub fn with_run(mut self, run: impl Into<String>) -> Self {
        self.run_id = Some(run.into());
        self
    }
}

/// Continuous multichannel signal, channel-major `[n_channels, n_samples]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub subject_id: String,
    pub session_id: String,
    pub sfreq: f64,
    pub channels: Vec<String>,
    pub data: Array2<f32>,
    pub events: Vec<Event>,
}

impl Recording {
    /// Builds a recording and checks its invariants.
    pub fn new(
        recording_id: impl Into<String>,
        subject_id: impl Into<String>,
        session_id: impl Into<String>,
        sfreq: f64,
        channels: Vec<String>,
        data: Array2<f32>,
        events: Vec<Event>,
    ) -> Result<Self, DomainError> {
        let rec = Recording {
            recording_id: recording_id.into(),
            subject_id: subject_id.into(),
            session_id: session_id.into(),
            sfreq,
            channels,
            data,
            events,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |reason: String| DomainError::InvalidRecording {
            id: self.recording_id.clone(),
            reason,
        };
        if !(self.sfreq.is_finite() && self.sfreq > 0.0) {
            return Err(fail(format!("sfreq must be positive, got {}", self.sfreq)));
        }
        if self.data.nrows() != self.channels.len() {
            return Err(fail(format!(
                "data has {} rows but {} channel names",
                self.data.nrows(),
                self.channels.len()
            )));
        }
        let unique: BTreeSet<&String> = self.channels.iter().collect();
        if unique.len() != self.channels.len() {
            return Err(fail("duplicate channel names".into()));
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            let (ch, t) = (pos / self.data.ncols().max(1), pos % self.data.ncols().max(1));
            return Err(fail(format!("non-finite sample at channel {ch}, index {t}")));
        }
        let duration = self.duration();
        for ev in &self.events {
            if !(ev.onset >= 0.0 && ev.onset <= duration) {
                return Err(fail(format!(
                    "event onset {} outside [0, {duration}]",
                    ev.onset
                )));
            }
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Duration in seconds.
    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / self.sfreq
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    BinaryClassification,
    MulticlassClassification,
    MultilabelClassification,
    Regression,
    Retrieval,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::BinaryClassification,
        ObjectiveKind::MulticlassClassification,
        ObjectiveKind::MultilabelClassification,
        ObjectiveKind::Regression,
        ObjectiveKind::Retrieval,
    ];

    /// Single-label classification (binary or multiclass).
    pub fn is_single_label(self) -> bool {
        matches!(
            self,
            ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::BinaryClassification => "binary_classification",
            ObjectiveKind::MulticlassClassification => "multiclass_classification",
            ObjectiveKind::MultilabelClassification => "multilabel_classification",
            ObjectiveKind::Regression => "regression",
            ObjectiveKind::Retrieval => "retrieval",
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "binary" | "binary_classification" => ObjectiveKind::BinaryClassification,
            "multiclass" | "clf" | "multiclass_classification" => {
                ObjectiveKind::MulticlassClassification
            }
            "multilabel" | "multilabel_classification" => ObjectiveKind::MultilabelClassification,
            "reg" | "regression" => ObjectiveKind::Regression,
            "retr" | "retrieval" => ObjectiveKind::Retrieval,
            other => return Err(DomainError::UnknownObjective(other.to_string())),
        })
    }
}

/// Per-example ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Target {
    ClassIndex(usize),
    LabelVector(Vec<bool>),
    Scalar(f64),
    Embedding(Vec<f64>),
}

impl Target {
    /// Number of outputs this target implies, when it can tell (class indices cannot).
    pub fn dim(&self) -> Option<usize> {
        match self {
            Target::ClassIndex(_) => None,
            Target::LabelVector(v) => Some(v.len()),
            Target::Scalar(_) => Some(1),
            Target::Embedding(v) => Some(v.len()),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Target::ClassIndex(_) => "class_index",
            Target::LabelVector(_) => "label_vector",
            Target::Scalar(_) => "scalar",
            Target::Embedding(_) => "embedding",
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Target::Scalar(v) => v.is_finite(),
            Target::Embedding(v) => v.iter().all(|x| x.is_finite()),
            _ => true,
        }
    }

    /// Flattens the target into a numeric vector (one-hot for class indices).
    pub fn to_vector(&self, n_outputs: usize) -> Vec<f64> {
        match self {
            Target::ClassIndex(c) => {
                let mut v = vec![0.0; n_outputs];
                if *c < n_outputs {
                    v[*c] = 1.0;
                }
                v
            }
            Target::LabelVector(l) => l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            Target::Scalar(s) => vec![*s],
            Target::Embedding(e) => e.clone(),
        }
    }
}

/// Model output for one example, mirroring [`Target`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Prediction {
    ClassProbs(Vec<f64>),
    LabelProbs(Vec<f64>),
    Scalar(f64),
    Embedding(Vec<f64>),
}

impl Prediction {
    pub fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::InvalidPrediction(m));
        match self {
            Prediction::ClassProbs(p) => {
                if p.is_empty() || p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return bad("class probabilities must be finite and non-negative".into());
                }
                let s: f64 = p.iter().sum();
                if (s - 1.0).abs() > 1e-6 {
                    return bad(format!("class probabilities sum to {s}"));
                }
            }
            Prediction::LabelProbs(p) => {
                if p.iter().any(|x| !x.is_finite() || !(0.0..=1.0).contains(x)) {
                    return bad("label probabilities must lie in [0, 1]".into());
                }
            }
            Prediction::Scalar(v) => {
                if !v.is_finite() {
                    return bad("scalar prediction is not finite".into());
                }
            }
            Prediction::Embedding(e) => {
                if e.iter().any(|x| !x.is_finite()) {
                    return bad("embedding has non-finite entries".into());
                }
            }
        }
        Ok(())
    }

    /// Argmax class for class-probability predictions (lowest index wins ties).
    pub fn argmax(&self) -> Option<usize> {
        match self {
            Prediction::ClassProbs(p) => {
                let mut best = 0;
                for (i, &v) in p.iter().enumerate() {
                    if v > p[best] {
                        best = i;
                    }
                }
                Some(best)
            }
            _ => None,
        }
    }

    /// Numeric payload as a flat vector.
    pub fn values(&self) -> Vec<f64> {
        match self {
            Prediction::ClassProbs(v) | Prediction::LabelProbs(v) | Prediction::Embedding(v) => {
                v.clone()
            }
            Prediction::Scalar(s) => vec![*s],
        }
    }

    /// Rebuilds a prediction of the right shape for `objective` from raw values.
    pub fn from_values(objective: ObjectiveKind, values: Vec<f64>) -> Prediction {
        match objective {
            ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
                Prediction::ClassProbs(values)
            }
            ObjectiveKind::MultilabelClassification => Prediction::LabelProbs(values),
            ObjectiveKind::Regression => Prediction::Scalar(values.first().copied().unwrap_or(f64::NAN)),
            ObjectiveKind::Retrieval => Prediction::Embedding(values),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitLabel {
    Train,
    Valid,
    Test,
}

impl SplitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitLabel::Train => "train",
            SplitLabel::Valid => "valid",
            SplitLabel::Test => "test",
        }
    }
}

impl fmt::Display for SplitLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Epoched windows with per-example targets and tags.
///
/// `split_labels` is all-`None` for an unsplit set.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleSet {
    /// `[n_examples, n_channels, n_times]`
    pub windows: Array3<f32>,
    pub targets: Vec<Target>,
    pub example_ids: Vec<String>,
    pub subject_ids: Vec<String>,
    pub session_ids: Vec<String>,
    pub run_ids: Vec<String>,
    pub concept_ids: Vec<Option<String>>,
    pub descriptions: Vec<String>,
    pub split_labels: Vec<Option<SplitLabel>>,
    pub sfreq: f64,
    /// Window start relative to the trigger, in seconds.
    pub window_start: f64,
    pub duration: f64,
}

impl ExampleSet {
    pub fn empty(n_channels: usize, n_times: usize, sfreq: f64, window_start: f64, duration: f64) -> Self {
        ExampleSet {
            windows: Array3::zeros((0, n_channels, n_times)),
            targets: vec![],
            example_ids: vec![],
            subject_ids: vec![],
            session_ids: vec![],
            run_ids: vec![],
            concept_ids: vec![],
            descriptions: vec![],
            split_labels: vec![],
            sfreq,
            window_start,
            duration,
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len_of(Axis(0))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.windows.len_of(Axis(1))
    }

    pub fn n_times(&self) -> usize {
        self.windows.len_of(Axis(2))
    }

    /// Indices of examples carrying `label`.
    pub fn indices_of(&self, label: SplitLabel) -> Vec<usize> {
        self.split_labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| (*l == Some(label)).then_some(i))
            .collect()
    }

    /// Sub-set restricted to `indices`, preserving order.
    pub fn select(&self, indices: &[usize]) -> ExampleSet {
        let pick = |v: &Vec<String>| indices.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        ExampleSet {
            windows: self.windows.select(Axis(0), indices),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            example_ids: pick(&self.example_ids),
            subject_ids: pick(&self.subject_ids),
            session_ids: pick(&self.session_ids),
            run_ids: pick(&self.run_ids),
            concept_ids: indices.iter().map(|&i| self.concept_ids[i].clone()).collect(),
            descriptions: pick(&self.descriptions),
            split_labels: indices.iter().map(|&i| self.split_labels[i]).collect(),
            sfreq: self.sfreq,
            window_start: self.window_start,
            duration: self.duration,
        }
    }

    /// Concatenates sets that share window geometry.
    pub fn concat(sets: &[ExampleSet]) -> Option<ExampleSet> {
        let first = sets.first()?;
        let views: Vec<_> = sets.iter().map(|s| s.windows.view()).collect();
        let windows = ndarray::concatenate(Axis(0), &views).ok()?;
        let mut out = ExampleSet { windows, ..ExampleSet::empty(0, 0, first.sfreq, first.window_start, first.duration) };
        for s in sets {
            out.targets.extend(s.targets.iter().cloned());
            out.example_ids.extend(s.example_ids.iter().cloned());
            out.subject_ids.extend(s.subject_ids.iter().cloned());
            out.session_ids.extend(s.session_ids.iter().cloned());
            out.run_ids.extend(s.run_ids.iter().cloned());
            out.concept_ids.extend(s.concept_ids.iter().cloned());
            out.descriptions.extend(s.descriptions.iter().cloned());
            out.split_labels.extend(s.split_labels.iter().cloned());
        }
        Some(out)
    }

    /// Copy with split labels replaced.
    pub fn with_labels(&self, labels: Vec<SplitLabel>) -> ExampleSet {
        let mut out = self.clone();
        out.split_labels = labels.into_iter().map(Some).collect();
        out
    }

    /// Counts of examples per split label.
    pub fn split_counts(&self) -> BTreeMap<SplitLabel, usize> {
        let mut counts = BTreeMap::new();
        for l in self.split_labels.iter().flatten() {
            *counts.entry(*l).or_insert(0) += 1;
        }
        counts
    }
}

/// Checks every [`ExampleSet`] invariant and describes each violation found.
pub fn validate_example_set(es: &ExampleSet) -> Vec<String> {
    let mut out = Vec::new();
    let n = es.len();
    let lists: [(&str, usize); 8] = [
        ("targets", es.targets.len()),
        ("example_ids", es.example_ids.len()),
        ("subject_ids", es.subject_ids.len()),
        ("session_ids", es.session_ids.len()),
        ("run_ids", es.run_ids.len()),
        ("concept_ids", es.concept_ids.len()),
        ("descriptions", es.descriptions.len()),
        ("split_labels", es.split_labels.len()),
    ];
    for (name, len) in lists {
        if len != n {
            out.push(format!("{name} has {len} entries for {n} examples"));
        }
    }
    let non_finite = es.windows.iter().filter(|v| !v.is_finite()).count();
    if non_finite > 0 {
        out.push(format!("{non_finite} non-finite samples in windows"));
    }
    let labelled = es.split_labels.iter().filter(|l| l.is_some()).count();
    if labelled > 0 && labelled < es.split_labels.len() {
        for (i, l) in es.split_labels.iter().enumerate() {
            if l.is_none() {
                let id = es.example_ids.get(i).map(String::as_str).unwrap_or("?");
                out.push(format!("example {i} ({id}) has no split label"));
            }
        }
    }
    if let Some(first) = es.targets.first() {
        let kind = first.variant_name();
        let dim = first.dim();
        for (i, t) in es.targets.iter().enumerate() {
            if t.variant_name() != kind || t.dim() != dim {
                out.push(format!("target {i} is {} (dim {:?}), expected {kind} (dim {dim:?})", t.variant_name(), t.dim()));
            }
            if !t.is_finite() {
                out.push(format!("target {i} is not finite"));
            }
        }
    }
    let ids: BTreeSet<&String> = es.example_ids.iter().collect();
    if ids.len() != es.example_ids.len() {
        out.push("example ids are not unique".into());
    }
    if !(es.sfreq.is_finite() && es.sfreq > 0.0) {
        out.push(format!("sfreq must be positive, got {}", es.sfreq));
    }
    if !(es.duration > 0.0) {
        out.push(format!("duration must be positive, got {}", es.duration));
    }
    out
}

/// One metric value for one run, with the references used to normalize it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub metric_name: String,
    pub value: f64,
    pub dummy_value: f64,
    pub perfect_value: f64,
    /// `None` when the dummy already reaches the perfect value.
    pub normalized: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_normalized: Option<f64>,
    pub seed: u64,
    pub n_test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { reason: String },
    /// The model refused the task; an absent cell, not a failure.
    Declined { reason: String },
}

/// One (model, task, dataset, seed) execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub model_id: String,
    pub task_id: String,
    pub dataset_id: String,
    pub seed: u64,
    #[serde(with = "hex_u64")]
    pub config_hash: u64,
    /// Re-executions of the same key (`--force`, retries) bump this counter.
    #[serde(default)]
    pub attempt: u32,
    /// Whether `dataset_id` is the task's core dataset.
    pub core_dataset: bool,
    #[serde(with = "hex_u64")]
    pub split_hash: u64,
    pub status: RunStatus,
    pub scores: Vec<ScoreRecord>,
    pub pretrain_overlap: bool,
    /// Recipe deviations declared by the model (e.g. a lowered learning rate).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deviations: BTreeMap<String, serde_json::Value>,
    pub wall_time: f64,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl RunRecord {
    pub fn key(&self) -> RunKey {
        RunKey {
            model_id: self.model_id.clone(),
            task_id: self.task_id.clone(),
            dataset_id: self.dataset_id.clone(),
            seed: self.seed,
            config_hash: self.config_hash,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    /// Headline score (first declared metric).
    pub fn headline(&self) -> Option<&ScoreRecord> {
        self.scores.first()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunKey {
    pub model_id: String,
    pub task_id: String,
    pub dataset_id: String,
    pub seed: u64,
    pub config_hash: u64,
}

pub(crate) mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of a canonical config text.
pub fn hash_config(canonical: &str) -> u64 {
    hash_bytes(canonical.as_bytes())
}

pub(crate) fn hash_bytes(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Key-sorted compact JSON of any serializable value.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // `serde_json::Value` objects are BTreeMaps, so keys come out sorted.
    let v = serde_json::to_value(value).expect("config values serialize to JSON");
    serde_json::to_string(&v).expect("JSON values always print")
}
