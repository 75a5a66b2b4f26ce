//! CSV tables and JSON plot data for one ranking variant.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;

use serde::Serialize;

use super::{
    aggregate_variant, compare_rankings, ordered, rank_std_within_task, Kendall, MeanRank, RankError, RankTable,
    ScoreTable, Variant, RANK_STD_MIN_DATASETS,
};
use crate::domain::RunRecord;

pub const REPORT_SCHEMA: &str = "report/v1";

/// File name to contents; rendering is deterministic for a given store.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportBundle {
    pub variant: Variant,
    pub files: BTreeMap<String, String>,
    pub ranking: Vec<MeanRank>,
    pub issues: Vec<String>,
}

impl ReportBundle {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    task: &'a str,
    dataset: &'a str,
    core_dataset: bool,
    model: &'a str,
    metric: &'a str,
    n_seeds: usize,
    mean: f64,
    sem: Option<f64>,
    dummy_mean: f64,
    normalized_mean: Option<f64>,
    normalized_sem: Option<f64>,
    max_normalized: Option<f64>,
    pretrain_overlap: bool,
}

#[derive(Serialize)]
struct TaskRankRow<'a> {
    task: &'a str,
    model: &'a str,
    rank: f64,
}

#[derive(Serialize)]
struct RankRow<'a> {
    position: usize,
    model: &'a str,
    mean_rank: f64,
    coverage: usize,
    n_tasks: usize,
    pretrain_overlap: bool,
}

#[derive(Serialize)]
struct KendallRow {
    ranking_a: &'static str,
    ranking_b: &'static str,
    tau: f64,
    p_value: f64,
    n_models: usize,
}

#[derive(Serialize)]
struct Bar<'a> {
    task: &'a str,
    dataset: &'a str,
    model: &'a str,
    score: f64,
    sem: Option<f64>,
    normalized: Option<f64>,
    normalized_sem: Option<f64>,
    max_normalized: Option<f64>,
    pretrain_overlap: bool,
}

#[derive(Serialize)]
struct BoxSeries<'a> {
    model: &'a str,
    task_ranks: Vec<f64>,
    normalized: Vec<f64>,
}

#[derive(Serialize)]
struct PlotData<'a> {
    schema: &'static str,
    variant: Variant,
    models: Vec<&'a str>,
    ranking: &'a [MeanRank],
    bars: Vec<Bar<'a>>,
    boxes: Vec<BoxSeries<'a>>,
    rank_std: &'a [super::RankStd],
    kendall_core_full: Option<Kendall>,
    issues: &'a [String],
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV output is UTF-8")
}

fn csv_with_header<T: Serialize>(header: &[&str], rows: Vec<T>) -> String {
    if rows.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("header writes");
        return String::from_utf8(w.into_inner().expect("in-memory writer")).expect("CSV output is UTF-8");
    }
    to_csv(rows)
}

/// Builds every table and the plot data for `variant` from a store snapshot.
pub fn emit_report(records: &[RunRecord], variant: Variant) -> Result<ReportBundle, RankError> {
    let scores = ScoreTable::from_records(records);
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    let table = RankTable::from_cells(&scores.rank_cells());
    let mut issues = scores.issues.clone();
    issues.extend(table.issues.iter().cloned());

    let included: BTreeSet<(String, String)> = table
        .tasks
        .iter()
        .flat_map(|(t, task)| {
            let ds: Vec<String> = match variant {
                Variant::Core => task.core_dataset().map(str::to_string).into_iter().collect(),
                Variant::Full => task.datasets.keys().cloned().collect(),
            };
            ds.into_iter().map(move |d| (t.clone(), d))
        })
        .collect();
    for (t, task) in &table.tasks {
        if variant == Variant::Core && task.core_dataset().is_none() {
            issues.push(format!("task {t}: no unique core dataset"));
        }
    }
    let cells: Vec<_> = scores
        .cells
        .iter()
        .filter(|c| included.contains(&(c.task.clone(), c.dataset.clone())))
        .collect();

    let ranking = ordered(aggregate_variant(&table, variant));
    let task_ranks = table.task_ranks(variant);
    let pretrained: BTreeSet<&str> = cells.iter().filter(|c| c.pretrain_overlap).map(|c| c.model.as_str()).collect();
    let rank_std = rank_std_within_task(&table, RANK_STD_MIN_DATASETS);
    let kendall = match compare_rankings(
        &aggregate_variant(&table, Variant::Core),
        &aggregate_variant(&table, Variant::Full),
    ) {
        Ok(k) => Some(k),
        Err(e) => {
            issues.push(format!("core/full comparison: {e}"));
            None
        }
    };

    let mut files = BTreeMap::new();
    files.insert(
        "scores.csv".to_string(),
        to_csv(cells.iter().map(|c| ScoreRow {
            task: &c.task,
            dataset: &c.dataset,
            core_dataset: c.core_dataset,
            model: &c.model,
            metric: &c.metric,
            n_seeds: c.seeds.len(),
            mean: c.mean,
            sem: c.sem,
            dummy_mean: c.dummy_mean,
            normalized_mean: c.normalized_mean,
            normalized_sem: c.normalized_sem,
            max_normalized: c.max_normalized,
            pretrain_overlap: c.pretrain_overlap,
        })),
    );
    files.insert(
        "task_ranks.csv".to_string(),
        csv_with_header(
            &["task", "model", "rank"],
            task_ranks
                .iter()
                .flat_map(|(t, ms)| ms.iter().map(move |(m, r)| TaskRankRow { task: t, model: m, rank: *r }))
                .collect(),
        ),
    );
    files.insert(
        "rank_table.csv".to_string(),
        csv_with_header(
            &["position", "model", "mean_rank", "coverage", "n_tasks", "pretrain_overlap"],
            ranking
                .iter()
                .enumerate()
                .map(|(i, r)| RankRow {
                    position: i + 1,
                    model: &r.model,
                    mean_rank: r.mean_rank,
                    coverage: r.coverage,
                    n_tasks: r.n_tasks,
                    pretrain_overlap: pretrained.contains(r.model.as_str()),
                })
                .collect(),
        ),
    );
    files.insert(
        "rank_std.csv".to_string(),
        csv_with_header(&["model", "task", "std", "n_datasets"], rank_std.rows.clone()),
    );
    files.insert(
        "kendall.csv".to_string(),
        csv_with_header(
            &["ranking_a", "ranking_b", "tau", "p_value", "n_models"],
            kendall
                .iter()
                .map(|k| KendallRow { ranking_a: "core", ranking_b: "full", tau: k.tau, p_value: k.p_value, n_models: k.n })
                .collect(),
        ),
    );

    let bars = cells
        .iter()
        .map(|c| Bar {
            task: &c.task,
            dataset: &c.dataset,
            model: &c.model,
            score: c.mean,
            sem: c.sem,
            normalized: c.normalized_mean,
            normalized_sem: c.normalized_sem,
            max_normalized: c.max_normalized,
            pretrain_overlap: c.pretrain_overlap,
        })
        .collect();
    let boxes = ranking
        .iter()
        .map(|r| BoxSeries {
            model: &r.model,
            task_ranks: task_ranks.values().filter_map(|t| t.get(&r.model).copied()).collect(),
            normalized: cells.iter().filter(|c| c.model == r.model).filter_map(|c| c.normalized_mean).collect(),
        })
        .collect();
    let plot = PlotData {
        schema: REPORT_SCHEMA,
        variant,
        models: ranking.iter().map(|r| r.model.as_str()).collect(),
        ranking: &ranking,
        bars,
        boxes,
        rank_std: &rank_std.rows,
        kendall_core_full: kendall,
        issues: &issues,
    };
    let mut json = serde_json::to_string_pretty(&plot).expect("plot data serializes");
    json.push('\n');
    files.insert("plot_data.json".to_string(), json);

    Ok(ReportBundle { variant, files, ranking, issues })
}
