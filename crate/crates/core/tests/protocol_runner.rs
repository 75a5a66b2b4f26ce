//! Engine against the echo runner binary over real pipes and sockets.

use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use nbench::bench::{
    builtin_models, execute, plan, prepare_dataset, resolve_tasks, run_experiment, store, Experiment, ModelKind,
    ModelSpec, PlanOptions, PreparedData, RunOptions, Store, Workspace,
};
use nbench::domain::{RunRecord, RunStatus, SplitLabel};
use nbench::protocol::{DataManifest, OfferReply, ProtocolError, RunnerClient, DEFAULT_TIMEOUT};
use nbench::ranking::Variant;

const ECHO: &str = env!("CARGO_BIN_EXE_nb-echo-runner");

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("protocol-runner")
}

fn prepared(task_id: &str) -> Arc<PreparedData> {
    static CACHE: OnceLock<std::sync::Mutex<std::collections::BTreeMap<String, Arc<PreparedData>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap();
    guard
        .entry(task_id.to_string())
        .or_insert_with(|| {
            let task = &resolve_tasks(&[task_id.to_string()]).unwrap()[0];
            let source = task.sources().next().unwrap();
            Arc::new(prepare_dataset(&Workspace::new(root()), task, source).unwrap())
        })
        .clone()
}

fn echo(id: &str, args: &[&str]) -> ModelSpec {
    let mut command = vec![ECHO.to_string()];
    command.extend(args.iter().map(|s| s.to_string()));
    ModelSpec::new(id, ModelKind::External { command })
}

fn experiment(model: &ModelSpec, task_id: &str, seed: u64) -> Experiment {
    let tasks = resolve_tasks(&[task_id.to_string()]).unwrap();
    let opts = PlanOptions { variant: Variant::Core, seeds: Some(seed as usize + 1), force: false };
    plan(std::slice::from_ref(model), &tasks, &opts, &[]).into_iter().find(|e| e.seed == seed).unwrap()
}

fn run(model: &ModelSpec, task_id: &str, seed: u64) -> RunRecord {
    let data = prepared(task_id);
    let opts = RunOptions { runner_timeout: Duration::from_secs(20), ..RunOptions::default() };
    run_experiment(&experiment(model, task_id, seed), Ok(&data), &opts)
}

fn manifest(data: &PreparedData) -> DataManifest {
    DataManifest {
        cache_path: data.cache_path.clone(),
        split_manifest_path: data.manifest_path.clone(),
        split_hash: data.manifest.split_hash,
        counts: data.examples.split_counts(),
    }
}

/// Handshake, offer, data and training against `args`, ready for predict.
fn trained_client(task_id: &str, args: &[&str]) -> (RunnerClient, Arc<PreparedData>) {
    let data = prepared(task_id);
    let task = &resolve_tasks(&[task_id.to_string()]).unwrap()[0];
    let mut cmd = vec![ECHO.to_string()];
    cmd.extend(args.iter().map(|s| s.to_string()));
    let mut client = RunnerClient::spawn(&cmd, Duration::from_secs(20)).unwrap();
    client.handshake().unwrap();
    assert_eq!(client.offer(task, 0, data.n_outputs).unwrap(), OfferReply::Accepted);
    client.send_data(&manifest(&data)).unwrap();
    client.train(|_| {}).unwrap();
    (client, data)
}

fn test_ids(data: &PreparedData) -> Vec<String> {
    data.manifest.ids_of(SplitLabel::Test).into_iter().map(str::to_string).collect()
}

#[test]
fn dummy_mode_reproduces_engine_dummy_exactly() {
    let internal = builtin_models().into_iter().find(|m| m.id == "dummy").unwrap();
    let external = echo("echo", &["--mode", "dummy"]);
    for task in ["n170_synthetic", "artifact_synthetic", "retrieval_synthetic"] {
        for seed in [0, 1] {
            let a = run(&internal, task, seed);
            let b = run(&external, task, seed);
            assert_eq!(b.status, RunStatus::Ok, "{task}");
            assert_eq!(a.scores, b.scores, "{task} seed {seed}");
            assert!(b.scores.iter().all(|s| s.normalized == Some(0.0)));
        }
    }
}

#[test]
fn short_predictions_are_a_count_mismatch() {
    let (mut client, data) = trained_client("n170_synthetic", &["--mode", "short"]);
    let ids = test_ids(&data);
    let err = client.predict(SplitLabel::Test, &ids, nbench::domain::ObjectiveKind::BinaryClassification, 2).unwrap_err();
    assert_eq!(err, ProtocolError::CountMismatch { expected: ids.len(), found: ids.len() - 1 });
}

#[test]
fn non_finite_prediction_is_rejected_with_its_index() {
    let (mut client, data) = trained_client("n170_synthetic", &["--mode", "nan"]);
    let err = client
        .predict(SplitLabel::Test, &test_ids(&data), nbench::domain::ObjectiveKind::BinaryClassification, 2)
        .unwrap_err();
    assert!(matches!(err, ProtocolError::BadPrediction { index: 0, .. }), "{err:?}");
    let rec = run(&echo("nan", &["--mode", "nan"]), "n170_synthetic", 0);
    assert!(matches!(&rec.status, RunStatus::Failed { reason } if reason.contains("prediction 0")), "{:?}", rec.status);
}

#[test]
fn crashing_runner_fails_its_experiment_and_leaves_the_store_intact() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let tasks = resolve_tasks(&["n170_synthetic".to_string()]).unwrap();
    let dummy = builtin_models().into_iter().find(|m| m.id == "dummy").unwrap();
    let models = vec![dummy, echo("crashy", &["--mode", "crash"])];
    let experiments = plan(&models, &tasks, &PlanOptions { variant: Variant::Core, seeds: Some(2), force: false }, &[]);
    let mut st = Store::open(&ws.store_path()).unwrap();
    let opts = RunOptions { workers: 2, runner_timeout: Duration::from_secs(20) };
    let summary = execute(&ws, &experiments, &opts, &mut st, |_| {}).unwrap();
    assert_eq!((summary.ok, summary.failed), (2, 2));
    drop(st);
    let (records, warnings) = store::read_records(&ws.store_path()).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(records.len(), 4);
    for r in &records {
        match r.model_id.as_str() {
            "dummy" => assert!(r.is_ok()),
            _ => assert!(matches!(r.status, RunStatus::Failed { .. })),
        }
    }
}

#[test]
fn silent_runner_times_out() {
    assert_eq!(DEFAULT_TIMEOUT, Duration::from_secs(30));
    let mut client = RunnerClient::spawn(&[ECHO.into(), "--mode".into(), "silent".into()], Duration::from_millis(300)).unwrap();
    let t0 = Instant::now();
    let err = client.handshake().unwrap_err();
    assert!(matches!(err, ProtocolError::Timeout { .. }), "{err:?}");
    assert!(t0.elapsed() < Duration::from_secs(5));
}

#[test]
fn version_two_runner_is_refused() {
    let mut client = RunnerClient::spawn(&[ECHO.into(), "--mode".into(), "v2".into()], Duration::from_secs(20)).unwrap();
    assert_eq!(client.handshake().unwrap_err(), ProtocolError::VersionMismatch { expected: 1, found: 2 });
}

#[test]
fn unsupported_objective_is_declined() {
    let model = echo("clf", &["--mode", "classification-only"]);
    let rec = run(&model, "retrieval_synthetic", 0);
    assert!(matches!(&rec.status, RunStatus::Declined { reason } if reason.contains("retrieval")), "{:?}", rec.status);
    assert!(rec.scores.is_empty());
    assert_eq!(run(&model, "n170_synthetic", 0).status, RunStatus::Ok);
}

#[test]
fn missing_data_path_fails_before_sending() {
    let data = prepared("n170_synthetic");
    let task = &resolve_tasks(&["n170_synthetic".to_string()]).unwrap()[0];
    let mut client = RunnerClient::spawn(&[ECHO.into()], Duration::from_secs(20)).unwrap();
    client.connection().record();
    client.handshake().unwrap();
    client.offer(task, 0, data.n_outputs).unwrap();
    let mut m = manifest(&data);
    m.split_manifest_path = root().join("no-such-manifest.json");
    assert!(matches!(client.send_data(&m), Err(ProtocolError::MissingPath { .. })));
    let sent = client.connection().transcript.clone().unwrap();
    assert!(sent.iter().all(|l| !l.contains("\"data_manifest\"")), "{sent:?}");
    assert!(sent.iter().any(|l| l.contains("\"task_offer\"")));
}

#[test]
fn declared_deviations_reach_the_record() {
    let rec = run(&echo("dev", &["--deviate", "lr=0.01", "--deviate", "note=fewer epochs"]), "n170_synthetic", 0);
    assert_eq!(rec.status, RunStatus::Ok);
    assert_eq!(rec.deviations["lr"], serde_json::json!(0.01));
    assert_eq!(rec.deviations["note"], serde_json::json!("fewer epochs"));
}

#[test]
fn runner_over_tcp() {
    let addr = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().to_string()
    };
    let mut child = Command::new(ECHO).args(["--listen", &addr]).stdout(Stdio::null()).spawn().unwrap();
    let start = Instant::now();
    let mut client = loop {
        match RunnerClient::connect_tcp(&addr, Duration::from_secs(20)) {
            Ok(c) => break c,
            Err(e) if start.elapsed() > Duration::from_secs(10) => panic!("{e}"),
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    };
    let caps = client.handshake().unwrap();
    assert_eq!(caps.objectives.len(), 5);
    let data = prepared("n170_synthetic");
    let task = &resolve_tasks(&["n170_synthetic".to_string()]).unwrap()[0];
    assert_eq!(client.offer(task, 3, data.n_outputs).unwrap(), OfferReply::Accepted);
    client.send_data(&manifest(&data)).unwrap();
    client.train(|p| assert!(matches!(p.phase, nbench::protocol::Phase::Training | nbench::protocol::Phase::Trained))).unwrap();
    let ids = test_ids(&data);
    let preds = client.predict(SplitLabel::Test, &ids, task.objective, data.n_outputs).unwrap();
    assert_eq!(preds.len(), ids.len());
    client.close().unwrap();
    assert!(child.wait().unwrap().success());
}
