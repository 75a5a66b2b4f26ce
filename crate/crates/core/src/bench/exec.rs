//! Running planned experiments and recording their outcomes.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::store::Store;
use super::{BenchError, Experiment, ModelKind, RunOptions, Workspace, SPLIT_SEED};
use crate::baseline::{dummy_fit_predict, run_handcrafted};
use crate::config::{SourceSpec, TaskSpec};
use crate::data::prepare_cached;
use crate::domain::{ExampleSet, Prediction, RunRecord, RunStatus, ScoreRecord, SplitLabel};
use crate::metrics::{evaluate, normalize_score, EvalInput};
use crate::optim::{predict, train_linear_decoder, InputMap, LinearDecoder};
use crate::protocol::{DataManifest, OfferReply, RunnerClient};
use crate::split::{apply_split, SplitManifest};

/// A split dataset shared by every experiment on it.
#[derive(Debug)]
pub struct PreparedData {
    pub task_id: String,
    pub dataset_id: String,
    pub examples: ExampleSet,
    pub n_outputs: usize,
    pub manifest: SplitManifest,
    pub cache_path: PathBuf,
    pub manifest_path: PathBuf,
}

impl PreparedData {
    pub fn subset(&self, labels: &[SplitLabel]) -> ExampleSet {
        let idx: Vec<usize> = labels.iter().flat_map(|&l| self.examples.indices_of(l)).collect();
        self.examples.select(&idx)
    }
}

/// Prepares (or reuses) the cache, applies the split and writes its manifest.
pub fn prepare_dataset(ws: &Workspace, task: &TaskSpec, source: &SourceSpec) -> Result<PreparedData, BenchError> {
    let data_root = ws.data_dir();
    let prepared = prepare_cached(task, source, Some(&data_root), &ws.cache_dir())?;
    let examples = apply_split(&prepared.examples, &task.split, SPLIT_SEED, Some(&data_root))?;
    let manifest = SplitManifest::from_examples(&examples);
    let manifest_path = ws
        .splits_dir()
        .join(source.dataset_id())
        .join(format!("{}-{:016x}.json", task.task_id, manifest.split_hash));
    if !manifest_path.exists() {
        manifest.save(&manifest_path)?;
    }
    Ok(PreparedData {
        task_id: task.task_id.clone(),
        dataset_id: source.dataset_id(),
        examples,
        n_outputs: prepared.n_outputs,
        manifest,
        cache_path: prepared.cache_path.expect("prepare_cached sets the cache path"),
        manifest_path,
    })
}

enum Failure {
    Failed(String),
    Declined(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Failed(e.to_string())
    }
}

struct ModelOutput {
    predictions: Vec<Prediction>,
    deviations: BTreeMap<String, serde_json::Value>,
}

fn external(
    command: &[String],
    exp: &Experiment,
    data: &PreparedData,
    test_ids: &[String],
    opts: &RunOptions,
) -> Result<ModelOutput, Failure> {
    let mut client = RunnerClient::spawn(command, opts.runner_timeout)?;
    client.handshake()?;
    if let OfferReply::Declined(reason) = client.offer(&exp.task, exp.seed, data.n_outputs)? {
        let _ = client.close();
        return Err(Failure::Declined(reason));
    }
    client.send_data(&DataManifest {
        cache_path: data.cache_path.clone(),
        split_manifest_path: data.manifest_path.clone(),
        split_hash: data.manifest.split_hash,
        counts: data.examples.split_counts(),
    })?;
    let deviations = client.train(|p| log::debug!("{}: {:?}", exp.model.id, p))?;
    let predictions = client.predict(SplitLabel::Test, test_ids, exp.task.objective, data.n_outputs)?;
    if let Err(e) = client.close() {
        log::warn!("{}: runner did not close cleanly: {e}", exp.model.id);
    }
    Ok(ModelOutput { predictions, deviations })
}

fn run_model(exp: &Experiment, data: &PreparedData, opts: &RunOptions) -> Result<(ModelOutput, ExampleSet), Failure> {
    let spec = &exp.task;
    let n_out = data.n_outputs;
    let test = data.subset(&[SplitLabel::Test]);
    let plain = |predictions| ModelOutput { predictions, deviations: BTreeMap::new() };
    let out = match &exp.model.kind {
        ModelKind::Dummy => {
            let fit = data.subset(&[SplitLabel::Train, SplitLabel::Valid]);
            plain(dummy_fit_predict(&fit.targets, spec.objective, n_out, test.len(), exp.seed)?)
        }
        ModelKind::Chance => {
            let map = InputMap::Flatten;
            let decoder = LinearDecoder::init(map.dim(test.n_channels(), test.n_times()), n_out, exp.seed);
            plain(predict(&decoder, map, &test, spec.objective))
        }
        ModelKind::Handcrafted => {
            let fit = data.subset(&[SplitLabel::Train, SplitLabel::Valid]);
            plain(run_handcrafted(spec, n_out, &fit, &test, exp.seed)?.predictions)
        }
        ModelKind::Linear { input } => {
            let train = data.subset(&[SplitLabel::Train]);
            let valid = data.subset(&[SplitLabel::Valid]);
            let outcome = train_linear_decoder(spec, n_out, &train, &valid, &spec.trainer, *input, exp.seed)?;
            plain(predict(&outcome.decoder, *input, &test, spec.objective))
        }
        ModelKind::External { command } => {
            let ids = data.manifest.ids_of(SplitLabel::Test).into_iter().map(str::to_string).collect::<Vec<_>>();
            external(command, exp, data, &ids, opts)?
        }
    };
    Ok((out, test))
}

fn score(exp: &Experiment, data: &PreparedData, out: &ModelOutput, test: &ExampleSet) -> Result<Vec<ScoreRecord>, Failure> {
    let spec = &exp.task;
    let input = |predictions: &[Prediction]| {
        evaluate(
            &EvalInput {
                objective: spec.objective,
                n_outputs: data.n_outputs,
                targets: &test.targets,
                predictions,
                subjects: &test.subject_ids,
                concepts: &test.concept_ids,
            },
            &spec.metrics,
        )
    };
    let values = input(&out.predictions)?;
    let fit = data.subset(&[SplitLabel::Train, SplitLabel::Valid]);
    let dummy = dummy_fit_predict(&fit.targets, spec.objective, data.n_outputs, test.len(), exp.seed)?;
    let dummy_values = input(&dummy)?;
    Ok(values
        .iter()
        .zip(&dummy_values)
        .map(|(v, d)| {
            let perfect = v.name.perfect_value();
            ScoreRecord {
                metric_name: v.name.as_str().to_string(),
                value: v.value,
                dummy_value: d.value,
                perfect_value: perfect,
                normalized: normalize_score(v.value, d.value, perfect).ok(),
                max_normalized: None,
                seed: exp.seed,
                n_test: test.len(),
            }
        })
        .collect())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn record(exp: &Experiment, split_hash: u64, status: RunStatus, scores: Vec<ScoreRecord>) -> RunRecord {
    RunRecord {
        model_id: exp.model.id.clone(),
        task_id: exp.task.task_id.clone(),
        dataset_id: exp.dataset_id(),
        seed: exp.seed,
        config_hash: exp.config_hash,
        attempt: exp.attempt,
        core_dataset: exp.core_dataset,
        split_hash,
        status,
        scores,
        pretrain_overlap: exp.model.pretrain_overlap,
        deviations: BTreeMap::new(),
        wall_time: 0.0,
        started_at_ms: 0,
        finished_at_ms: 0,
    }
}

/// Runs one experiment; failures become failed records rather than errors.
pub fn run_experiment(exp: &Experiment, data: Result<&PreparedData, &str>, opts: &RunOptions) -> RunRecord {
    let started = now_ms();
    let t0 = Instant::now();
    let mut rec = match data {
        Err(reason) => record(exp, 0, RunStatus::Failed { reason: format!("data preparation failed: {reason}") }, vec![]),
        Ok(data) => {
            let hash = data.manifest.split_hash;
            match run_model(exp, data, opts).and_then(|(out, test)| Ok((score(exp, data, &out, &test)?, out))) {
                Ok((scores, out)) => {
                    let mut r = record(exp, hash, RunStatus::Ok, scores);
                    r.deviations = out.deviations;
                    r
                }
                Err(Failure::Declined(reason)) => record(exp, hash, RunStatus::Declined { reason }, vec![]),
                Err(Failure::Failed(reason)) => record(exp, hash, RunStatus::Failed { reason }, vec![]),
            }
        }
    };
    rec.wall_time = t0.elapsed().as_secs_f64();
    rec.started_at_ms = started;
    rec.finished_at_ms = now_ms();
    rec
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub ok: usize,
    pub failed: usize,
    pub declined: usize,
}

/// Runs `plan` on a bounded pool, appending each record to `store` as it finishes.
pub fn execute(
    ws: &Workspace,
    plan: &[Experiment],
    opts: &RunOptions,
    store: &mut Store,
    mut on_record: impl FnMut(&RunRecord),
) -> Result<RunSummary, BenchError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| BenchError::Store(format!("worker pool: {e}")))?;

    let mut keys: Vec<(String, String)> = Vec::new();
    let mut firsts: Vec<&Experiment> = Vec::new();
    for e in plan {
        let k = (e.task.task_id.clone(), e.dataset_id());
        if !keys.contains(&k) {
            keys.push(k);
            firsts.push(e);
        }
    }
    let prepared: Vec<Result<Arc<PreparedData>, String>> = pool.install(|| {
        firsts
            .par_iter()
            .map(|e| prepare_dataset(ws, &e.task, &e.source).map(Arc::new).map_err(|err| err.to_string()))
            .collect()
    });
    let datasets: BTreeMap<(String, String), Result<Arc<PreparedData>, String>> =
        keys.into_iter().zip(prepared).collect();

    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut summary = RunSummary::default();
    let mut append_error = None;
    std::thread::scope(|scope| {
        scope.spawn(|| {
            pool.install(|| {
                plan.par_iter().for_each_with(tx, |tx, exp| {
                    let data = &datasets[&(exp.task.task_id.clone(), exp.dataset_id())];
                    let rec = run_experiment(exp, data.as_deref().map_err(String::as_str), opts);
                    let _ = tx.send(rec);
                });
            });
        });
        for rec in rx {
            match &rec.status {
                RunStatus::Ok => summary.ok += 1,
                RunStatus::Failed { reason } => {
                    log::warn!("{}/{}/{} seed {}: {reason}", rec.model_id, rec.task_id, rec.dataset_id, rec.seed);
                    summary.failed += 1;
                }
                RunStatus::Declined { .. } => summary.declined += 1,
            }
            on_record(&rec);
            if let Err(e) = store.append(rec) {
                append_error.get_or_insert(e);
            }
        }
    });
    match append_error {
        Some(e) => Err(e),
        None => Ok(summary),
    }
}
