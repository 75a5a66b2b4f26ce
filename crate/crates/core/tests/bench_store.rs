//! Results store, incremental planning and report emission.

use std::collections::BTreeMap;
use std::fs;

use nbench::bench::{
    builtin_models, execute, plan, resolve_tasks, store, BenchError, ModelSpec, PlanOptions, Query, RunOptions, Store,
    Workspace,
};
use nbench::config::apply_overrides;
use nbench::domain::{RunRecord, RunStatus, ScoreRecord};
use nbench::ranking::{emit_report, Variant, REPORT_SCHEMA};

fn record(model: &str, seed: u64, attempt: u32, value: f64) -> RunRecord {
    RunRecord {
        model_id: model.into(),
        task_id: "t".into(),
        dataset_id: "d".into(),
        seed,
        config_hash: 0xabc,
        attempt,
        core_dataset: true,
        split_hash: 0x123,
        status: RunStatus::Ok,
        scores: vec![ScoreRecord {
            metric_name: "BalancedAcc".into(),
            value,
            dummy_value: 0.5,
            perfect_value: 1.0,
            normalized: Some((value - 0.5) / 0.5),
            max_normalized: None,
            seed,
            n_test: 10,
        }],
        pretrain_overlap: false,
        deviations: BTreeMap::new(),
        wall_time: 0.1,
        started_at_ms: 1,
        finished_at_ms: 2,
    }
}

fn models(ids: &[&str]) -> Vec<ModelSpec> {
    builtin_models().into_iter().filter(|m| ids.contains(&m.id.as_str())).collect()
}

#[test]
fn append_then_query_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    {
        let mut st = Store::open(&path).unwrap();
        st.append(record("a", 0, 0, 0.7)).unwrap();
        st.append(record("a", 1, 0, 0.8)).unwrap();
        st.append(record("b", 0, 0, 0.6)).unwrap();
    }
    let st = Store::open(&path).unwrap();
    assert_eq!(st.records().len(), 3);
    assert_eq!(st.query(&Query { model: Some("a"), ..Query::default() }).len(), 2);
    assert_eq!(st.query(&Query { seed: Some(0), ..Query::default() }).len(), 2);
    assert_eq!(st.query(&Query { config_hash: Some(1), ..Query::default() }).len(), 0);
    assert_eq!(st.records()[1], record("a", 1, 0, 0.8));
}

#[test]
fn duplicate_key_and_attempt_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut st = Store::open(&dir.path().join("r.jsonl")).unwrap();
    st.append(record("a", 0, 0, 0.7)).unwrap();
    assert!(matches!(st.append(record("a", 0, 0, 0.9)), Err(BenchError::Duplicate(_))));
    st.append(record("a", 0, 1, 0.9)).unwrap();
    assert_eq!(st.records().len(), 2);
}

#[test]
fn corrupted_lines_are_skipped_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    {
        let mut st = Store::open(&path).unwrap();
        for s in 0..3 {
            st.append(record("a", s, 0, 0.7)).unwrap();
        }
    }
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[1] = lines[1].replace("0.7", "0.9");
    lines.push("{\"truncated".into());
    fs::write(&path, lines.join("\n")).unwrap();
    let (records, warnings) = store::read_records(&path).unwrap();
    assert_eq!(records.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 2]);
    assert_eq!(warnings.len(), 2);
    assert!(warnings[0].contains(":2:"), "{warnings:?}");
}

#[test]
fn second_writer_is_locked_out_until_release() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let first = Store::open(&path).unwrap();
    assert!(Store::lock_path(&path).exists());
    assert!(matches!(Store::open(&path), Err(BenchError::Locked { .. })));
    drop(first);
    assert!(!Store::lock_path(&path).exists());
    Store::open(&path).unwrap();
}

#[test]
fn compact_keeps_the_latest_attempt() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.jsonl");
    let mut st = Store::open(&path).unwrap();
    st.append(record("a", 0, 0, 0.6)).unwrap();
    st.append(record("a", 0, 2, 0.8)).unwrap();
    st.append(record("a", 0, 1, 0.7)).unwrap();
    st.append(record("b", 0, 0, 0.5)).unwrap();
    assert_eq!(st.compact().unwrap(), 2);
    drop(st);
    let (records, _) = store::read_records(&path).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records.iter().find(|r| r.model_id == "a").unwrap().attempt, 2);
}

#[test]
fn warm_store_plans_only_missing_or_failed_work() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let tasks = resolve_tasks(&["n170_synthetic".to_string()]).unwrap();
    let ms = models(&["dummy", "chance"]);
    let opts = PlanOptions { variant: Variant::Core, seeds: Some(2), force: false };
    let mut st = Store::open(&ws.store_path()).unwrap();

    let first = plan(&ms, &tasks, &opts, st.records());
    assert_eq!(first.len(), 4);
    let summary = execute(&ws, &first, &RunOptions::default(), &mut st, |_| {}).unwrap();
    assert_eq!(summary.ok, 4);
    assert!(plan(&ms, &tasks, &opts, st.records()).is_empty());

    let more = PlanOptions { seeds: Some(3), ..opts };
    let next = plan(&ms, &tasks, &more, st.records());
    assert_eq!(next.iter().map(|e| e.seed).collect::<Vec<_>>(), vec![2, 2]);

    let changed = vec![apply_overrides(&tasks[0], &["data.start=-0.1".into()]).unwrap()];
    let fresh = plan(&ms, &changed, &opts, st.records());
    assert_eq!(fresh.len(), 4);
    assert!(fresh.iter().all(|e| first.iter().all(|f| f.config_hash != e.config_hash)));

    let mut failed = record("dummy", 0, 0, 0.0);
    failed.status = RunStatus::Failed { reason: "boom".into() };
    let e = first.iter().find(|e| e.model.id == "chance").unwrap();
    failed.task_id = e.task.task_id.clone();
    failed.dataset_id = e.dataset_id();
    failed.config_hash = e.config_hash;
    failed.model_id = "chance".into();
    let only_failed = plan(&models(&["chance"]), &tasks, &opts, &[failed]);
    assert_eq!(only_failed.len(), 2);
    assert!(only_failed.iter().any(|x| x.seed == 0 && x.attempt == 1));
}

#[test]
fn forced_rerun_is_identical_and_appends_new_attempts() {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace::new(dir.path());
    let tasks = resolve_tasks(&["n170_synthetic".to_string(), "reaction_time_synthetic".to_string()]).unwrap();
    let ms = models(&["dummy", "linear_pooled"]);
    let opts = PlanOptions { variant: Variant::Core, seeds: Some(2), force: false };
    let mut st = Store::open(&ws.store_path()).unwrap();
    execute(&ws, &plan(&ms, &tasks, &opts, &[]), &RunOptions::default(), &mut st, |_| {}).unwrap();
    let forced = plan(&ms, &tasks, &PlanOptions { force: true, ..opts }, st.records());
    assert_eq!(forced.len(), 8);
    assert!(forced.iter().all(|e| e.attempt == 1));
    execute(&ws, &forced, &RunOptions { workers: 3, ..RunOptions::default() }, &mut st, |_| {}).unwrap();

    let mut by_key: BTreeMap<_, Vec<&RunRecord>> = BTreeMap::new();
    for r in st.records() {
        by_key.entry(r.key()).or_default().push(r);
    }
    assert_eq!(by_key.len(), 8);
    for runs in by_key.values() {
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[0].scores, runs[1].scores);
        assert_eq!(runs[0].split_hash, runs[1].split_hash);
    }
}

#[test]
fn report_is_deterministic_and_complete() {
    let mut records = Vec::new();
    for (m, base) in [("a", 0.9), ("b", 0.7), ("c", 0.8)] {
        for seed in 0..3 {
            let mut r = record(m, seed, 0, base + 0.01 * seed as f64);
            r.task_id = "t1".into();
            records.push(r.clone());
            r.task_id = "t2".into();
            r.scores[0].value = 1.6 - r.scores[0].value;
            records.push(r);
        }
    }
    let one = emit_report(&records, Variant::Core).unwrap();
    let mut shuffled = records.clone();
    shuffled.reverse();
    let two = emit_report(&shuffled, Variant::Core).unwrap();
    assert_eq!(one.files, two.files);

    let names: Vec<&str> = one.files.keys().map(String::as_str).collect();
    assert_eq!(names, ["kendall.csv", "plot_data.json", "rank_std.csv", "rank_table.csv", "scores.csv", "task_ranks.csv"]);
    let rows = |f: &str| one.files[f].lines().count() - 1;
    assert_eq!(rows("scores.csv"), 6);
    assert_eq!(rows("rank_table.csv"), 3);
    assert_eq!(rows("task_ranks.csv"), 6);
    let plot: serde_json::Value = serde_json::from_str(&one.files["plot_data.json"]).unwrap();
    assert_eq!(plot["schema"], REPORT_SCHEMA);
    assert!(one.ranking.iter().all(|m| m.mean_rank == 2.0));

    let dir = tempfile::tempdir().unwrap();
    one.write_to(dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("rank_table.csv")).unwrap(), one.files["rank_table.csv"]);
}
