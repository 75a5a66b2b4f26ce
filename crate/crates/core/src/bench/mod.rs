//! Experiment planning, execution and the results store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{builtin_task_registry, SourceSpec, TaskSpec};
use crate::data::DataError;
use crate::domain::{canonical_json, hash_config, RunRecord};
use crate::optim::InputMap;
use crate::ranking::Variant;
use crate::split::SplitError;

mod exec;
pub mod store;

pub use exec::{execute, prepare_dataset, run_experiment, PreparedData, RunSummary};
pub use store::{Query, Store};

/// Splits are drawn once per dataset; run seeds only vary model randomness.
pub const SPLIT_SEED: u64 = 0;
pub const POOLED_BINS: usize = 8;
/// Bumped when the meaning of stored scores changes.
pub const STORE_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown task {id:?}; valid ids: {}", .valid.join(", "))]
    UnknownTask { id: String, valid: Vec<String> },
    #[error("unknown model {id:?}; valid ids: {}", .valid.join(", "))]
    UnknownModel { id: String, valid: Vec<String> },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("results store: {0}")]
    Store(String),
    #[error("results store is locked by {} (process {holder})", .lock.display())]
    Locked { lock: PathBuf, holder: String },
    #[error("duplicate run record: {0}")]
    Duplicate(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("bad model definition: {0}")]
    BadModel(String),
}

impl BenchError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> BenchError {
        BenchError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    Dummy,
    /// An untrained decoder at its seeded initialization.
    Chance,
    Handcrafted,
    Linear { input: InputMap },
    External { command: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub kind: ModelKind,
    /// Whether the model saw benchmark data during pretraining.
    #[serde(default)]
    pub pretrain_overlap: bool,
}

impl ModelSpec {
    pub fn new(id: &str, kind: ModelKind) -> ModelSpec {
        ModelSpec { id: id.to_string(), kind, pretrain_overlap: false }
    }

    /// `id=command args...`, split on whitespace.
    pub fn parse_external(text: &str) -> Result<ModelSpec, BenchError> {
        let (id, cmd) = text.split_once('=').ok_or_else(|| BenchError::BadModel(format!("expected ID=COMMAND, got {text:?}")))?;
        let command: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
        if id.trim().is_empty() || command.is_empty() {
            return Err(BenchError::BadModel(format!("expected ID=COMMAND, got {text:?}")));
        }
        Ok(ModelSpec::new(id.trim(), ModelKind::External { command }))
    }

    pub fn describe(&self) -> String {
        match &self.kind {
            ModelKind::Dummy => "constant predictor fit on training targets".into(),
            ModelKind::Chance => "untrained linear decoder (seeded initialization)".into(),
            ModelKind::Handcrafted => "category-routed handcrafted pipeline".into(),
            ModelKind::Linear { input: InputMap::Flatten } => "linear decoder on flattened windows".into(),
            ModelKind::Linear { input: InputMap::Pooled { bins } } => {
                format!("linear decoder on {bins} time-pooled segments per channel")
            }
            ModelKind::External { command } => format!("external runner: {}", command.join(" ")),
        }
    }
}

pub fn builtin_models() -> Vec<ModelSpec> {
    vec![
        ModelSpec::new("dummy", ModelKind::Dummy),
        ModelSpec::new("chance", ModelKind::Chance),
        ModelSpec::new("handcrafted", ModelKind::Handcrafted),
        ModelSpec::new("linear", ModelKind::Linear { input: InputMap::Flatten }),
        ModelSpec::new("linear_pooled", ModelKind::Linear { input: InputMap::Pooled { bins: POOLED_BINS } }),
    ]
}

/// Looks up ids among the built-in models and `extra`.
pub fn resolve_models(ids: &[String], extra: &[ModelSpec]) -> Result<Vec<ModelSpec>, BenchError> {
    let all: Vec<ModelSpec> = builtin_models().into_iter().chain(extra.iter().cloned()).collect();
    ids.iter()
        .map(|id| {
            all.iter().find(|m| &m.id == id).cloned().ok_or_else(|| BenchError::UnknownModel {
                id: id.clone(),
                valid: all.iter().map(|m| m.id.clone()).collect(),
            })
        })
        .collect()
}

pub fn resolve_tasks(ids: &[String]) -> Result<Vec<TaskSpec>, BenchError> {
    let all = builtin_task_registry();
    ids.iter()
        .map(|id| {
            all.iter().find(|t| &t.task_id == id).cloned().ok_or_else(|| BenchError::UnknownTask {
                id: id.clone(),
                valid: all.iter().map(|t| t.task_id.clone()).collect(),
            })
        })
        .collect()
}

/// One (model, task, dataset, seed) cell of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub model: ModelSpec,
    pub task: TaskSpec,
    pub source: SourceSpec,
    pub core_dataset: bool,
    pub seed: u64,
    pub config_hash: u64,
    pub attempt: u32,
}

impl Experiment {
    pub fn dataset_id(&self) -> String {
        self.source.dataset_id()
    }
}

#[derive(Serialize)]
struct HashInput<'a> {
    format: u32,
    split_seed: u64,
    task: serde_json::Value,
    model: &'a ModelKind,
}

/// Identity of everything but the seed that determines a run's scores.
pub fn experiment_hash(task: &TaskSpec, source: &SourceSpec, model: &ModelSpec) -> u64 {
    let mut t = task.clone();
    t.source = source.clone();
    t.extra_sources.clear();
    t.trainer.seeds.clear();
    let task = serde_json::from_str(&t.canonical()).expect("canonical task text is JSON");
    hash_config(&canonical_json(&HashInput { format: STORE_FORMAT, split_seed: SPLIT_SEED, task, model: &model.kind }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanOptions {
    pub variant: Variant,
    /// Seeds `0..n`; `None` uses each task's configured seeds.
    pub seeds: Option<usize>,
    pub force: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { variant: Variant::Core, seeds: None, force: false }
    }
}

/// The experiment grid in task, dataset, model, seed order, minus completed runs.
pub fn plan(models: &[ModelSpec], tasks: &[TaskSpec], opts: &PlanOptions, existing: &[RunRecord]) -> Vec<Experiment> {
    let mut done: BTreeMap<crate::domain::RunKey, (bool, u32)> = BTreeMap::new();
    for r in existing {
        let e = done.entry(r.key()).or_insert((false, 0));
        e.0 |= r.is_ok();
        e.1 = e.1.max(r.attempt + 1);
    }
    let mut out = Vec::new();
    for task in tasks {
        let sources: Vec<(SourceSpec, bool)> = match opts.variant {
            Variant::Core => vec![(task.source.clone(), true)],
            Variant::Full => std::iter::once((task.source.clone(), true))
                .chain(task.extra_sources.iter().map(|s| (s.clone(), false)))
                .collect(),
        };
        let seeds: Vec<u64> = match opts.seeds {
            Some(n) => (0..n as u64).collect(),
            None => task.trainer.seeds.clone(),
        };
        for (source, core) in &sources {
            for model in models {
                let config_hash = experiment_hash(task, source, model);
                for &seed in &seeds {
                    let key = crate::domain::RunKey {
                        model_id: model.id.clone(),
                        task_id: task.task_id.clone(),
                        dataset_id: source.dataset_id(),
                        seed,
                        config_hash,
                    };
                    let (completed, next_attempt) = done.get(&key).copied().unwrap_or((false, 0));
                    if completed && !opts.force {
                        continue;
                    }
                    out.push(Experiment {
                        model: model.clone(),
                        task: task.clone(),
                        source: source.clone(),
                        core_dataset: *core,
                        seed,
                        config_hash,
                        attempt: next_attempt,
                    });
                }
            }
        }
    }
    out
}

/// Directory layout under the benchmark root.
#[derive(Clone, Debug, PartialEq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub const ENV: &'static str = "NB_ROOT";

    pub fn new(root: impl Into<PathBuf>) -> Workspace {
        Workspace { root: root.into() }
    }

    /// `$NB_ROOT`, or `.nbench` in the working directory.
    pub fn from_env() -> Workspace {
        Workspace::new(std::env::var_os(Self::ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".nbench")))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.root.join("splits")
    }

    pub fn store_path(&self) -> PathBuf {
        self.root.join("results.jsonl")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    pub runner_timeout: Duration,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            runner_timeout: crate::protocol::DEFAULT_TIMEOUT,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grid_arithmetic() {
        let tasks = resolve_tasks(&ids(&["n170_synthetic", "ssvep_synthetic"])).unwrap();
        let mut models = resolve_models(&ids(&["dummy", "chance", "handcrafted"]), &[]).unwrap();
        models.push(ModelSpec::parse_external("m1=run-a").unwrap());
        models.push(ModelSpec::parse_external("m2=run-b --flag").unwrap());
        let p = plan(&models, &tasks, &PlanOptions { seeds: Some(3), ..PlanOptions::default() }, &[]);
        assert_eq!(p.len(), 30);
        assert_eq!(p[0].model.id, "dummy");
        assert_eq!((p[0].seed, p[1].seed, p[3].model.id.as_str()), (0, 1, "chance"));
        assert!(p.iter().all(|e| e.attempt == 0 && e.core_dataset));
    }

    #[test]
    fn full_variant_adds_extra_datasets() {
        let tasks = resolve_tasks(&ids(&["motor_imagery_synthetic"])).unwrap();
        let models = resolve_models(&ids(&["dummy"]), &[]).unwrap();
        let n_sources = 1 + tasks[0].extra_sources.len();
        assert!(n_sources > 1);
        let p = plan(&models, &tasks, &PlanOptions { variant: Variant::Full, seeds: Some(2), force: false }, &[]);
        assert_eq!(p.len(), 2 * n_sources);
        assert_eq!(p.iter().filter(|e| e.core_dataset).count(), 2);
    }

    #[test]
    fn unknown_ids_list_valid_choices() {
        let e = resolve_tasks(&ids(&["nope"])).unwrap_err().to_string();
        assert!(e.contains("n170_synthetic") && e.contains("nope"), "{e}");
        let e = resolve_models(&ids(&["nope"]), &[]).unwrap_err().to_string();
        assert!(e.contains("linear_pooled"), "{e}");
    }

    #[test]
    fn hash_ignores_seed_list_and_other_datasets() {
        let t = resolve_tasks(&ids(&["motor_imagery_synthetic"])).unwrap().remove(0);
        let m = &builtin_models()[0];
        let mut u = t.clone();
        u.trainer.seeds = vec![7];
        u.extra_sources.clear();
        assert_eq!(experiment_hash(&t, &t.source, m), experiment_hash(&u, &u.source, m));
        let mut v = t.clone();
        v.trainer.lr *= 2.0;
        assert_ne!(experiment_hash(&t, &t.source, m), experiment_hash(&v, &v.source, m));
        assert_ne!(experiment_hash(&t, &t.source, m), experiment_hash(&t, &t.source, &builtin_models()[1]));
    }
}
