//! Task configuration: YAML parsing, validation, overrides and the built-in registry.
//!
//! Documents are flattened to dotted paths before interpretation, so
//! `data: {neuro.baseline: [0, 0.2]}` and `data: {neuro: {baseline: [0, 0.2]}}`
//! are the same configuration. Unknown paths are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use thiserror::Error;

use crate::domain::{canonical_json, hash_config, ObjectiveKind};
use crate::metrics::MetricName;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed YAML: {0}")]
    Parse(String),
    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<String>),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("override `{0}` is not of the form path=value")]
    BadOverride(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Where a dataset comes from: a synthetic profile or a local root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Dataset name, or `synthetic:<profile>[#variant]`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
}

impl SourceSpec {
    pub fn new(name: impl Into<String>) -> Self {
        SourceSpec {
            name: name.into(),
            root: None,
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.name.starts_with("synthetic:")
    }

    /// Filesystem-safe identifier used in directory layouts and run records.
    pub fn dataset_id(&self) -> String {
        self.name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c.to_ascii_lowercase() } else { '_' })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Predefined,
    LeaveConceptOut,
    CrossSubject,
    WithinSubject,
    Random,
}

impl SplitKind {
    fn parse(s: &str) -> Option<SplitKind> {
        Some(match s {
            "Predefined" | "predefined" => SplitKind::Predefined,
            "LeaveConceptOut" | "leave_concept_out" => SplitKind::LeaveConceptOut,
            "CrossSubject" | "cross_subject" => SplitKind::CrossSubject,
            "WithinSubject" | "within_subject" => SplitKind::WithinSubject,
            // The reference listing names the example-level splitter after sklearn.
            "Random" | "random" | "SklearnSplit" => SplitKind::Random,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            SplitKind::Predefined => "Predefined",
            SplitKind::LeaveConceptOut => "LeaveConceptOut",
            SplitKind::CrossSubject => "CrossSubject",
            SplitKind::WithinSubject => "WithinSubject",
            SplitKind::Random => "Random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub kind: SplitKind,
    pub test_ratio: f64,
    pub valid_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratify_by: Option<String>,
    /// `last N sessions`, `last N runs`, `sessions a,b` or a manifest path (predefined).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventField {
    Description,
    EventType,
    ConceptId,
}

impl EventField {
    fn parse(s: &str) -> Option<EventField> {
        Some(match s {
            "description" => EventField::Description,
            "event_type" | "type" => EventField::EventType,
            "concept_id" | "concept" => EventField::ConceptId,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            EventField::Description => "description",
            EventField::EventType => "event_type",
            EventField::ConceptId => "concept_id",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    /// Table generated alongside a synthetic profile.
    Synthetic,
    /// JSON file `{"dim": D, "vectors": {"<id>": [..]}}`.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "codec", rename_all = "snake_case")]
pub enum TargetCodec {
    LabelEncoder {
        event_types: Vec<String>,
        event_field: EventField,
        return_one_hot: bool,
        classes: Option<Vec<String>>,
        /// Splits one event field into several labels (multilabel tasks).
        separator: String,
    },
    Scalar {
        event_field: EventField,
    },
    Embedding {
        event_field: EventField,
        embeddings: EmbeddingSource,
    },
}

impl TargetCodec {
    fn name(&self) -> &'static str {
        match self {
            TargetCodec::LabelEncoder { .. } => "LabelEncoder",
            TargetCodec::Scalar { .. } => "ScalarTarget",
            TargetCodec::Embedding { .. } => "EmbeddingTarget",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossName {
    CrossEntropyLoss,
    BCEWithLogitsLoss,
    MSELoss,
    ClipLoss,
}

impl LossName {
    /// The single loss each objective trains with.
    pub fn default_for(objective: ObjectiveKind) -> LossName {
        match objective {
            ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
                LossName::CrossEntropyLoss
            }
            ObjectiveKind::MultilabelClassification => LossName::BCEWithLogitsLoss,
            ObjectiveKind::Regression => LossName::MSELoss,
            ObjectiveKind::Retrieval => LossName::ClipLoss,
        }
    }

    pub fn compatible_with(self, objective: ObjectiveKind) -> bool {
        LossName::default_for(objective) == self
    }

    fn as_str(self) -> &'static str {
        match self {
            LossName::CrossEntropyLoss => "CrossEntropyLoss",
            LossName::BCEWithLogitsLoss => "BCEWithLogitsLoss",
            LossName::MSELoss => "MSELoss",
            LossName::ClipLoss => "ClipLoss",
        }
    }
}

impl FromStr for LossName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "CrossEntropyLoss" => LossName::CrossEntropyLoss,
            "BCEWithLogitsLoss" | "BCELoss" => LossName::BCEWithLogitsLoss,
            "MSELoss" => LossName::MSELoss,
            "ClipLoss" | "CLIPLoss" => LossName::ClipLoss,
            _ => return Err(()),
        })
    }
}

impl fmt::Display for LossName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    /// `n / (C * n_c)` from the training labels.
    Balanced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCategory {
    Evoked,
    P300,
    Ssvep,
    Bci,
    Clinical,
    Cognitive,
    InternalState,
    Sleep,
    Phenotyping,
    Misc,
}

impl TaskCategory {
    const NAMES: [(&'static str, TaskCategory); 10] = [
        ("evoked", TaskCategory::Evoked),
        ("p300", TaskCategory::P300),
        ("ssvep", TaskCategory::Ssvep),
        ("bci", TaskCategory::Bci),
        ("clinical", TaskCategory::Clinical),
        ("cognitive", TaskCategory::Cognitive),
        ("internal_state", TaskCategory::InternalState),
        ("sleep", TaskCategory::Sleep),
        ("phenotyping", TaskCategory::Phenotyping),
        ("misc", TaskCategory::Misc),
    ];

    fn parse(s: &str) -> Option<TaskCategory> {
        Self::NAMES.iter().find(|(n, _)| *n == s).map(|(_, c)| *c)
    }

    pub fn as_str(self) -> &'static str {
        Self::NAMES.iter().find(|(_, c)| *c == self).map(|(n, _)| *n).unwrap_or("misc")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreprocStage {
    Bandpass,
    Notch,
    Resample,
    RobustScale,
    Clamp,
}

impl PreprocStage {
    pub const ORDER: [PreprocStage; 5] = [
        PreprocStage::Bandpass,
        PreprocStage::Notch,
        PreprocStage::Resample,
        PreprocStage::RobustScale,
        PreprocStage::Clamp,
    ];

    fn parse(s: &str) -> Option<PreprocStage> {
        Some(match s {
            "bandpass" => PreprocStage::Bandpass,
            "notch" => PreprocStage::Notch,
            "resample" => PreprocStage::Resample,
            "robust_scale" => PreprocStage::RobustScale,
            "clamp" => PreprocStage::Clamp,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PreprocStage::Bandpass => "bandpass",
            PreprocStage::Notch => "notch",
            PreprocStage::Resample => "resample",
            PreprocStage::RobustScale => "robust_scale",
            PreprocStage::Clamp => "clamp",
        }
    }
}

/// Recording-level preprocessing for engine-prepared data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocSpec {
    pub target_sfreq: f64,
    pub band: [f64; 2],
    /// Base line frequencies; harmonics below Nyquist are added at run time.
    pub notch_freqs: Vec<f64>,
    pub clamp: f64,
    pub stages: Vec<PreprocStage>,
}

impl Default for PreprocSpec {
    fn default() -> Self {
        PreprocSpec {
            target_sfreq: 120.0,
            band: [0.1, 75.0],
            notch_freqs: vec![50.0, 60.0],
            clamp: 20.0,
            stages: PreprocStage::ORDER.to_vec(),
        }
    }
}

impl PreprocSpec {
    pub fn enabled(&self, stage: PreprocStage) -> bool {
        self.stages.contains(&stage)
    }
}

/// The shared downstream training recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerSpec {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f64>,
    pub seeds: Vec<u64>,
}

impl Default for TrainerSpec {
    fn default() -> Self {
        TrainerSpec {
            lr: 1e-4,
            weight_decay: 0.05,
            warmup_fraction: 0.10,
            max_epochs: 50,
            patience: 10,
            batch_size: 64,
            grad_clip: None,
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub category: TaskCategory,
    pub source: SourceSpec,
    /// Additional datasets used by the full benchmark variant.
    pub extra_sources: Vec<SourceSpec>,
    pub split: SplitPolicy,
    pub trigger_event_type: String,
    pub start: f64,
    pub duration: f64,
    /// Seconds relative to the window start.
    pub baseline: Option<[f64; 2]>,
    pub target: TargetCodec,
    pub objective: ObjectiveKind,
    pub loss: LossName,
    pub class_weighting: ClassWeighting,
    pub metrics: Vec<MetricName>,
    /// Target dimension; `None` lets the label encoder fix it at load.
    pub n_outputs: Option<usize>,
    pub preproc: PreprocSpec,
    pub trainer: TrainerSpec,
    /// Frequencies (Hz) whose co-spectra feed the spectral baseline.
    pub handcrafted_freqs: Vec<f64>,
}

impl TaskSpec {
    /// Headline metric (first declared); also drives early stopping.
    pub fn headline_metric(&self) -> MetricName {
        self.metrics[0]
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceSpec> {
        std::iter::once(&self.source).chain(self.extra_sources.iter())
    }

    pub fn canonical(&self) -> String {
        canonical_json(self)
    }

    pub fn config_hash(&self) -> u64 {
        hash_config(&self.canonical())
    }

    /// Serializes back to the YAML schema accepted by [`parse_task_config`].
    pub fn to_yaml(&self) -> String {
        let flat = to_flat(self);
        let mut root = Mapping::new();
        for (path, value) in flat {
            insert_nested(&mut root, &path, value);
        }
        serde_yaml::to_string(&Value::Mapping(root)).expect("YAML mappings always serialize")
    }
}

const REQUIRED: [&str; 8] = [
    "data.study.source.name",
    "data.study.split.name",
    "data.trigger_event_type",
    "data.start",
    "data.duration",
    "data.target.name",
    "loss.name",
    "metrics",
];

const OPTIONAL: [&str; 33] = [
    "task_id",
    "category",
    "objective",
    "n_outputs",
    "data.study.source.root",
    "data.study.extra_sources",
    "data.study.split.valid_split_ratio",
    "data.study.split.test_split_ratio",
    "data.study.split.stratify_by",
    "data.study.split.holdout",
    "data.neuro.baseline",
    "data.neuro.resample_sfreq",
    "data.neuro.band",
    "data.neuro.notch_freqs",
    "data.neuro.clamp",
    "data.neuro.stages",
    "data.target.event_types",
    "data.target.event_field",
    "data.target.return_one_hot",
    "data.target.classes",
    "data.target.separator",
    "data.target.embeddings",
    "loss.class_weights",
    "trainer.lr",
    "trainer.weight_decay",
    "trainer.warmup_fraction",
    "trainer.max_epochs",
    "trainer.patience",
    "trainer.batch_size",
    "trainer.grad_clip",
    "trainer.seeds",
    "handcrafted.freqs",
    "description",
];

fn is_known_path(path: &str) -> bool {
    REQUIRED.contains(&path) || OPTIONAL.contains(&path)
}

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) -> Result<(), ConfigError> {
    match value {
        Value::Mapping(map) => {
            for (k, v) in map {
                let key = match k {
                    Value::String(s) => s.clone(),
                    other => serde_yaml::to_string(other).unwrap_or_default().trim().to_string(),
                };
                let path = if prefix.is_empty() { key } else { format!("{prefix}.{key}") };
                flatten(&path, v, out)?;
            }
            Ok(())
        }
        Value::Tagged(t) => flatten(prefix, &t.value, out),
        other => {
            if prefix.is_empty() {
                return Err(ConfigError::Parse("top level must be a mapping".into()));
            }
            if out.insert(prefix.to_string(), other.clone()).is_some() {
                return Err(invalid(prefix, "key given twice"));
            }
            Ok(())
        }
    }
}

fn insert_nested(root: &mut Mapping, path: &str, value: Value) {
    let mut parts = path.split('.').peekable();
    let mut node = root;
    while let Some(part) = parts.next() {
        let key = Value::String(part.to_string());
        if parts.peek().is_none() {
            node.insert(key, value);
            return;
        }
        let entry = node.entry(key).or_insert_with(|| Value::Mapping(Mapping::new()));
        if !entry.is_mapping() {
            *entry = Value::Mapping(Mapping::new());
        }
        node = entry.as_mapping_mut().expect("just made a mapping");
    }
}

/// Typed accessors over a flattened document; consumed keys are removed.
struct Fields {
    map: BTreeMap<String, Value>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key).filter(|v| !v.is_null())
    }

    fn string(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(Value::Bool(b)) => Ok(Some(b.to_string())),
            Some(_) => Err(invalid(key, "expected a string")),
        }
    }

    fn f64(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => as_f64(&v).map(Some).ok_or_else(|| invalid(key, "expected a number")),
        }
    }

    fn usize(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|x| Some(x as usize))
                .ok_or_else(|| invalid(key, "expected a non-negative integer")),
        }
    }

    fn bool(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.as_bool().map(Some).ok_or_else(|| invalid(key, "expected a boolean")),
        }
    }

    /// A scalar or a sequence of scalars, as strings.
    fn strings(&mut self, key: &str) -> Result<Option<Vec<String>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Sequence(items)) => items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    Value::Number(n) => Ok(n.to_string()),
                    _ => Err(invalid(key, "expected a list of strings")),
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(Value::String(s)) => Ok(Some(vec![s])),
            Some(_) => Err(invalid(key, "expected a string or a list of strings")),
        }
    }

    fn f64s(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Sequence(items)) => items
                .iter()
                .map(|v| as_f64(v).ok_or_else(|| invalid(key, "expected a list of numbers")))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
            Some(v) => as_f64(&v)
                .map(|x| Some(vec![x]))
                .ok_or_else(|| invalid(key, "expected a number or a list of numbers")),
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        // YAML 1.2 reads `1e-4` as a float, but some emitters quote it.
        Value::String(s) => s.parse().ok(),
        _ => None,
    }
}

/// Parses and validates a task YAML document, applying defaults.
pub fn parse_task_config(text: &str) -> Result<TaskSpec, ConfigError> {
    let doc: Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut flat = BTreeMap::new();
    if !doc.is_null() {
        flatten("", &doc, &mut flat)?;
    }
    from_flat(flat)
}

fn from_flat(flat: BTreeMap<String, Value>) -> Result<TaskSpec, ConfigError> {
    if let Some(unknown) = flat.keys().find(|k| !is_known_path(k)) {
        return Err(ConfigError::UnknownKey(unknown.clone()));
    }
    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|k| flat.get(**k).map_or(true, Value::is_null))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::MissingKeys(missing));
    }
    let mut f = Fields { map: flat };

    let source_name = f.string("data.study.source.name")?.expect("required");
    let source = SourceSpec {
        name: source_name,
        root: f.string("data.study.source.root")?.map(PathBuf::from),
    };
    let extra_sources = f
        .strings("data.study.extra_sources")?
        .unwrap_or_default()
        .into_iter()
        .map(|name| SourceSpec { name, root: source.root.clone() })
        .collect();

    let split_name = f.string("data.study.split.name")?.expect("required");
    let kind = SplitKind::parse(&split_name)
        .ok_or_else(|| invalid("data.study.split.name", format!("unknown splitter `{split_name}`")))?;
    let split = SplitPolicy {
        kind,
        test_ratio: f.f64("data.study.split.test_split_ratio")?.unwrap_or(0.2),
        valid_ratio: f.f64("data.study.split.valid_split_ratio")?.unwrap_or(0.2),
        stratify_by: f.string("data.study.split.stratify_by")?,
        holdout: f.string("data.study.split.holdout")?,
    };

    let baseline = match f.f64s("data.neuro.baseline")? {
        None => None,
        Some(v) if v.len() == 2 => Some([v[0], v[1]]),
        Some(_) => return Err(invalid("data.neuro.baseline", "expected [t0, t1]")),
    };

    let mut preproc = PreprocSpec::default();
    if let Some(sf) = f.f64("data.neuro.resample_sfreq")? {
        preproc.target_sfreq = sf;
    }
    if let Some(band) = f.f64s("data.neuro.band")? {
        if band.len() != 2 {
            return Err(invalid("data.neuro.band", "expected [low, high]"));
        }
        preproc.band = [band[0], band[1]];
    }
    if let Some(n) = f.f64s("data.neuro.notch_freqs")? {
        preproc.notch_freqs = n;
    }
    if let Some(c) = f.f64("data.neuro.clamp")? {
        preproc.clamp = c;
    }
    if let Some(stages) = f.strings("data.neuro.stages")? {
        let mut parsed = Vec::new();
        for s in &stages {
            parsed.push(
                PreprocStage::parse(s)
                    .ok_or_else(|| invalid("data.neuro.stages", format!("unknown stage `{s}`")))?,
            );
        }
        // Stage order is fixed regardless of how the list is written.
        preproc.stages = PreprocStage::ORDER.iter().copied().filter(|s| parsed.contains(s)).collect();
    }

    let trigger_event_type = f.string("data.trigger_event_type")?.expect("required");
    let start = f.f64("data.start")?.expect("required");
    let duration = f.f64("data.duration")?.expect("required");

    let target_name = f.string("data.target.name")?.expect("required");
    let event_types = f.strings("data.target.event_types")?.unwrap_or_else(|| vec![trigger_event_type.clone()]);
    let field_name = f.string("data.target.event_field")?;
    let event_field = |default: EventField| -> Result<EventField, ConfigError> {
        match &field_name {
            None => Ok(default),
            Some(n) => EventField::parse(n)
                .ok_or_else(|| invalid("data.target.event_field", format!("unknown event field `{n}`"))),
        }
    };
    let return_one_hot = f.bool("data.target.return_one_hot")?;
    let classes = f.strings("data.target.classes")?;
    let separator = f.string("data.target.separator")?;
    let embeddings = f.string("data.target.embeddings")?;
    let target = match target_name.as_str() {
        "LabelEncoder" => TargetCodec::LabelEncoder {
            event_types,
            event_field: event_field(EventField::Description)?,
            return_one_hot: return_one_hot.unwrap_or(true),
            classes,
            separator: separator.unwrap_or_else(|| "+".into()),
        },
        "ScalarTarget" => TargetCodec::Scalar {
            event_field: event_field(EventField::Description)?,
        },
        "EmbeddingTarget" => TargetCodec::Embedding {
            event_field: event_field(EventField::ConceptId)?,
            embeddings: match embeddings.as_deref() {
                None | Some("synthetic") => EmbeddingSource::Synthetic,
                Some(p) => EmbeddingSource::File(PathBuf::from(p)),
            },
        },
        other => return Err(invalid("data.target.name", format!("unknown target codec `{other}`"))),
    };

    let loss_text = f.string("loss.name")?.expect("required");
    let loss = LossName::from_str(&loss_text)
        .map_err(|_| invalid("loss.name", format!("unknown loss `{loss_text}`")))?;
    let class_weighting = match f.string("loss.class_weights")?.as_deref() {
        None | Some("none") => ClassWeighting::None,
        Some("balanced") => ClassWeighting::Balanced,
        Some(o) => return Err(invalid("loss.class_weights", format!("expected none|balanced, got `{o}`"))),
    };
    let metric_names = f.strings("metrics")?.unwrap_or_default();
    let mut metrics = Vec::new();
    for m in &metric_names {
        metrics.push(MetricName::from_str(m).map_err(|_| invalid("metrics", format!("unknown metric `{m}`")))?);
    }

    let n_outputs = f.usize("n_outputs")?;
    let class_count = match &target {
        TargetCodec::LabelEncoder { classes: Some(c), .. } => Some(c.len()),
        _ => None,
    };
    let objective = match f.string("objective")? {
        Some(o) => ObjectiveKind::from_str(&o).map_err(|e| invalid("objective", e.to_string()))?,
        None => match loss {
            LossName::CrossEntropyLoss if n_outputs.or(class_count) == Some(2) => {
                ObjectiveKind::BinaryClassification
            }
            LossName::CrossEntropyLoss => ObjectiveKind::MulticlassClassification,
            LossName::BCEWithLogitsLoss => ObjectiveKind::MultilabelClassification,
            LossName::MSELoss => ObjectiveKind::Regression,
            LossName::ClipLoss => ObjectiveKind::Retrieval,
        },
    };

    let mut trainer = TrainerSpec::default();
    if let Some(v) = f.f64("trainer.lr")? {
        trainer.lr = v;
    }
    if let Some(v) = f.f64("trainer.weight_decay")? {
        trainer.weight_decay = v;
    }
    if let Some(v) = f.f64("trainer.warmup_fraction")? {
        trainer.warmup_fraction = v;
    }
    if let Some(v) = f.usize("trainer.max_epochs")? {
        trainer.max_epochs = v;
    }
    if let Some(v) = f.usize("trainer.patience")? {
        trainer.patience = v;
    }
    if let Some(v) = f.usize("trainer.batch_size")? {
        trainer.batch_size = v;
    }
    trainer.grad_clip = f.f64("trainer.grad_clip")?;
    match f.take("trainer.seeds") {
        None => {}
        Some(Value::Number(n)) => {
            let count = n.as_u64().ok_or_else(|| invalid("trainer.seeds", "expected a count or a list"))?;
            trainer.seeds = (0..count).collect();
        }
        Some(Value::Sequence(items)) => {
            trainer.seeds = items
                .iter()
                .map(|v| v.as_u64().ok_or_else(|| invalid("trainer.seeds", "seeds must be non-negative integers")))
                .collect::<Result<_, _>>()?;
        }
        Some(_) => return Err(invalid("trainer.seeds", "expected a count or a list")),
    }

    let category = match f.string("category")? {
        None => TaskCategory::Misc,
        Some(c) => TaskCategory::parse(&c).ok_or_else(|| invalid("category", format!("unknown category `{c}`")))?,
    };
    let task_id = f.string("task_id")?.unwrap_or_else(|| source.dataset_id());
    let handcrafted_freqs = f.f64s("handcrafted.freqs")?.unwrap_or_default();
    let _ = f.take("description");

    let spec = TaskSpec {
        task_id,
        category,
        source,
        extra_sources,
        split,
        trigger_event_type,
        start,
        duration,
        baseline,
        target,
        objective,
        loss,
        class_weighting,
        metrics,
        n_outputs: n_outputs.or(class_count),
        preproc,
        trainer,
        handcrafted_freqs,
    };
    validate_task(&spec)?;
    Ok(spec)
}

/// Checks every cross-field constraint of a resolved task.
pub fn validate_task(spec: &TaskSpec) -> Result<(), ConfigError> {
    if spec.task_id.is_empty() {
        return Err(invalid("task_id", "must not be empty"));
    }
    if !(spec.duration > 0.0 && spec.duration.is_finite()) {
        return Err(invalid("data.duration", "must be positive"));
    }
    if !spec.start.is_finite() {
        return Err(invalid("data.start", "must be finite"));
    }
    if let Some([t0, t1]) = spec.baseline {
        if !(0.0 <= t0 && t0 < t1 && t1 <= spec.duration + 1e-12) {
            return Err(invalid(
                "data.neuro.baseline",
                format!("[{t0}, {t1}] must lie within [0, {}] with t0 < t1", spec.duration),
            ));
        }
    }
    let s = &spec.split;
    for (key, r) in [
        ("data.study.split.test_split_ratio", s.test_ratio),
        ("data.study.split.valid_split_ratio", s.valid_ratio),
    ] {
        if !(r > 0.0 && r < 1.0) {
            return Err(invalid(key, format!("ratio {r} outside (0, 1)")));
        }
    }
    if s.test_ratio + s.valid_ratio >= 1.0 {
        return Err(invalid(
            "data.study.split.test_split_ratio",
            "test and valid ratios must sum below 1",
        ));
    }
    if s.kind == SplitKind::WithinSubject && s.holdout.is_none() {
        return Err(invalid("data.study.split.holdout", "within-subject splits need a holdout"));
    }
    if s.kind == SplitKind::Predefined && s.holdout.is_none() {
        return Err(invalid("data.study.split.holdout", "predefined splits need a manifest path"));
    }
    if !spec.loss.compatible_with(spec.objective) {
        return Err(invalid(
            "loss.name",
            format!("{} is not the loss for {} (expected {})", spec.loss, spec.objective, LossName::default_for(spec.objective)),
        ));
    }
    if spec.metrics.is_empty() {
        return Err(invalid("metrics", "at least one metric is required"));
    }
    for m in &spec.metrics {
        if !m.supports(spec.objective) {
            return Err(invalid("metrics", format!("{m} does not apply to {}", spec.objective)));
        }
    }
    let codec_ok = match (&spec.target, spec.objective) {
        (TargetCodec::LabelEncoder { .. }, o) => o.is_single_label() || o == ObjectiveKind::MultilabelClassification,
        (TargetCodec::Scalar { .. }, ObjectiveKind::Regression) => true,
        (TargetCodec::Embedding { .. }, ObjectiveKind::Retrieval) => true,
        _ => false,
    };
    if !codec_ok {
        return Err(invalid(
            "data.target.name",
            format!("{} cannot produce targets for {}", spec.target.name(), spec.objective),
        ));
    }
    if let Some(n) = spec.n_outputs {
        if n == 0 {
            return Err(invalid("n_outputs", "must be positive"));
        }
        let ok = match spec.objective {
            ObjectiveKind::BinaryClassification => n == 2,
            ObjectiveKind::MulticlassClassification => n >= 2,
            ObjectiveKind::Regression => n == 1,
            _ => true,
        };
        if !ok {
            return Err(invalid("n_outputs", format!("{n} outputs do not fit {}", spec.objective)));
        }
        if let TargetCodec::LabelEncoder { classes: Some(c), .. } = &spec.target {
            if c.len() != n {
                return Err(invalid("data.target.classes", format!("{} classes for {n} outputs", c.len())));
            }
        }
    } else if matches!(spec.objective, ObjectiveKind::Retrieval) {
        return Err(invalid("n_outputs", "retrieval tasks must declare the embedding dimension"));
    }
    let p = &spec.preproc;
    if !(p.band[0] > 0.0 && p.band[0] < p.band[1]) {
        return Err(invalid("data.neuro.band", format!("{:?} is not a valid band", p.band)));
    }
    if !(p.target_sfreq > 0.0) {
        return Err(invalid("data.neuro.resample_sfreq", "must be positive"));
    }
    if !(p.clamp > 0.0) {
        return Err(invalid("data.neuro.clamp", "must be positive"));
    }
    let t = &spec.trainer;
    if !(t.lr > 0.0) || t.weight_decay < 0.0 || t.max_epochs == 0 || t.batch_size == 0 {
        return Err(invalid("trainer", "lr, max_epochs and batch_size must be positive; weight_decay non-negative"));
    }
    if !(0.0..1.0).contains(&t.warmup_fraction) {
        return Err(invalid("trainer.warmup_fraction", "must lie in [0, 1)"));
    }
    if t.grad_clip.is_some_and(|g| !(g > 0.0)) {
        return Err(invalid("trainer.grad_clip", "must be positive"));
    }
    if t.seeds.is_empty() {
        return Err(invalid("trainer.seeds", "at least one seed is required"));
    }
    Ok(())
}

fn num(x: f64) -> Value {
    Value::Number(serde_yaml::Number::from(x))
}

fn nums(xs: &[f64]) -> Value {
    Value::Sequence(xs.iter().map(|&x| num(x)).collect())
}

fn strs(xs: &[String]) -> Value {
    Value::Sequence(xs.iter().map(|s| Value::String(s.clone())).collect())
}

fn s(x: &str) -> Value {
    Value::String(x.to_string())
}

/// Every field of a spec as dotted paths (the inverse of parsing).
fn to_flat(spec: &TaskSpec) -> BTreeMap<String, Value> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        m.insert(k.to_string(), v);
    };
    put("task_id", s(&spec.task_id));
    put("category", s(spec.category.as_str()));
    put("objective", s(spec.objective.as_str()));
    if let Some(n) = spec.n_outputs {
        put("n_outputs", Value::Number((n as u64).into()));
    }
    put("data.study.source.name", s(&spec.source.name));
    if let Some(root) = &spec.source.root {
        put("data.study.source.root", s(&root.to_string_lossy()));
    }
    if !spec.extra_sources.is_empty() {
        let names: Vec<String> = spec.extra_sources.iter().map(|e| e.name.clone()).collect();
        put("data.study.extra_sources", strs(&names));
    }
    put("data.study.split.name", s(spec.split.kind.name()));
    put("data.study.split.test_split_ratio", num(spec.split.test_ratio));
    put("data.study.split.valid_split_ratio", num(spec.split.valid_ratio));
    if let Some(st) = &spec.split.stratify_by {
        put("data.study.split.stratify_by", s(st));
    }
    if let Some(h) = &spec.split.holdout {
        put("data.study.split.holdout", s(h));
    }
    if let Some(b) = spec.baseline {
        put("data.neuro.baseline", nums(&b));
    }
    put("data.neuro.resample_sfreq", num(spec.preproc.target_sfreq));
    put("data.neuro.band", nums(&spec.preproc.band));
    put("data.neuro.notch_freqs", nums(&spec.preproc.notch_freqs));
    put("data.neuro.clamp", num(spec.preproc.clamp));
    let stages: Vec<String> = spec.preproc.stages.iter().map(|s| s.as_str().to_string()).collect();
    put("data.neuro.stages", strs(&stages));
    put("data.trigger_event_type", s(&spec.trigger_event_type));
    put("data.start", num(spec.start));
    put("data.duration", num(spec.duration));
    put("data.target.name", s(spec.target.name()));
    match &spec.target {
        TargetCodec::LabelEncoder { event_types, event_field, return_one_hot, classes, separator } => {
            put("data.target.event_types", strs(event_types));
            put("data.target.event_field", s(event_field.name()));
            put("data.target.return_one_hot", Value::Bool(*return_one_hot));
            if let Some(c) = classes {
                put("data.target.classes", strs(c));
            }
            put("data.target.separator", s(separator));
        }
        TargetCodec::Scalar { event_field } => put("data.target.event_field", s(event_field.name())),
        TargetCodec::Embedding { event_field, embeddings } => {
            put("data.target.event_field", s(event_field.name()));
            let e = match embeddings {
                EmbeddingSource::Synthetic => "synthetic".to_string(),
                EmbeddingSource::File(p) => p.to_string_lossy().into_owned(),
            };
            put("data.target.embeddings", s(&e));
        }
    }
    put("loss.name", s(spec.loss.as_str()));
    put(
        "loss.class_weights",
        s(match spec.class_weighting {
            ClassWeighting::None => "none",
            ClassWeighting::Balanced => "balanced",
        }),
    );
    let metrics: Vec<String> = spec.metrics.iter().map(|m| m.to_string()).collect();
    put("metrics", strs(&metrics));
    let t = &spec.trainer;
    put("trainer.lr", num(t.lr));
    put("trainer.weight_decay", num(t.weight_decay));
    put("trainer.warmup_fraction", num(t.warmup_fraction));
    put("trainer.max_epochs", Value::Number((t.max_epochs as u64).into()));
    put("trainer.patience", Value::Number((t.patience as u64).into()));
    put("trainer.batch_size", Value::Number((t.batch_size as u64).into()));
    if let Some(g) = t.grad_clip {
        put("trainer.grad_clip", num(g));
    }
    put(
        "trainer.seeds",
        Value::Sequence(t.seeds.iter().map(|&x| Value::Number(x.into())).collect()),
    );
    if !spec.handcrafted_freqs.is_empty() {
        put("handcrafted.freqs", nums(&spec.handcrafted_freqs));
    }
    m
}

/// Applies `a.b.c=value` overrides (values parsed as YAML scalars) and revalidates.
pub fn apply_overrides(spec: &TaskSpec, overrides: &[String]) -> Result<TaskSpec, ConfigError> {
    if overrides.is_empty() {
        return Ok(spec.clone());
    }
    let mut flat = to_flat(spec);
    for o in overrides {
        let (path, raw) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
        let path = path.trim();
        if path.is_empty() {
            return Err(ConfigError::BadOverride(o.clone()));
        }
        if !is_known_path(path) {
            return Err(ConfigError::UnknownKey(path.to_string()));
        }
        let value: Value =
            serde_yaml::from_str(raw).map_err(|e| invalid(path, format!("cannot parse `{raw}`: {e}")))?;
        // Switching codec or objective invalidates fields that only made sense for the old one.
        if path == "data.target.name" {
            for k in ["data.target.classes", "data.target.separator", "data.target.return_one_hot", "data.target.embeddings", "data.target.event_field"] {
                flat.remove(k);
            }
        }
        flat.insert(path.to_string(), value);
    }
    from_flat(flat)
}

const REGISTRY_FILES: [(&str, &str); 10] = [
    ("audiovisual_stimulus", include_str!("../tasks/audiovisual_stimulus.yaml")),
    ("n170_synthetic", include_str!("../tasks/n170_synthetic.yaml")),
    ("motor_imagery_synthetic", include_str!("../tasks/motor_imagery_synthetic.yaml")),
    ("ssvep_synthetic", include_str!("../tasks/ssvep_synthetic.yaml")),
    ("dementia_synthetic", include_str!("../tasks/dementia_synthetic.yaml")),
    ("artifact_synthetic", include_str!("../tasks/artifact_synthetic.yaml")),
    ("reaction_time_synthetic", include_str!("../tasks/reaction_time_synthetic.yaml")),
    ("retrieval_synthetic", include_str!("../tasks/retrieval_synthetic.yaml")),
    ("image_synthetic", include_str!("../tasks/image_synthetic.yaml")),
    ("speech_synthetic", include_str!("../tasks/speech_synthetic.yaml")),
];

/// Tasks shipped with the engine, each backed by a synthetic profile.
pub fn builtin_task_registry() -> Vec<TaskSpec> {
    REGISTRY_FILES
        .iter()
        .map(|(id, text)| {
            let spec = parse_task_config(text).unwrap_or_else(|e| panic!("built-in task {id}: {e}"));
            assert_eq!(&spec.task_id, id, "registry file name and task_id disagree");
            spec
        })
        .collect()
}

/// The five-task suite exercised by the end-to-end benchmark (one task per objective).
pub const DEFAULT_SUITE: [&str; 5] = [
    "n170_synthetic",
    "ssvep_synthetic",
    "artifact_synthetic",
    "reaction_time_synthetic",
    "retrieval_synthetic",
];

pub fn find_task(id: &str) -> Option<TaskSpec> {
    builtin_task_registry().into_iter().find(|t| t.task_id == id)
}
