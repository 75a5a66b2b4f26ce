//! Per-task ranks, Core/Full aggregation, rank dispersion and report emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod kendall;
mod report;
mod scores;

pub use kendall::{kendall_tau, Kendall};
pub use report::{emit_report, ReportBundle, REPORT_SCHEMA};
pub use scores::{ScoreCell, ScoreTable};

/// Fewest datasets a task needs before its rank dispersion is reported.
pub const RANK_STD_MIN_DATASETS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("need at least {needed} {what}, found {found}")]
    TooFew { what: String, found: usize, needed: usize },
    #[error("mismatched inputs: {0}")]
    Mismatch(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("non-finite score for model {model}")]
    NonFinite { model: String },
    #[error("no runs to report")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Core,
    Full,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Core => "core",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "core" => Ok(Variant::Core),
            "full" => Ok(Variant::Full),
            other => Err(format!("unknown variant {other:?} (expected core or full)")),
        }
    }
}

/// Rank 1 is best; tied scores share the mean of the positions they span.
pub fn rank_within_task(scores: &[f64], higher_is_better: bool) -> Result<Vec<f64>, RankError> {
    if scores.len() < 2 {
        return Err(RankError::TooFew { what: "models".into(), found: scores.len(), needed: 2 });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RankError::NonFinite { model: format!("#{i}") });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        let c = scores[i].total_cmp(&scores[j]);
        if higher_is_better {
            c.reverse()
        } else {
            c
        }
    });
    let mut ranks = vec![0.0; scores.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    Ok(ranks)
}

/// One representative score, the input unit of a [`RankTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub model: String,
    pub task: String,
    pub dataset: String,
    pub core_dataset: bool,
    pub higher_is_better: bool,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DatasetRanks {
    pub core: bool,
    pub scores: BTreeMap<String, f64>,
    pub ranks: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TaskRanks {
    pub higher_is_better: bool,
    pub datasets: BTreeMap<String, DatasetRanks>,
}

impl TaskRanks {
    /// The dataset standing in for the task in the Core variant.
    pub fn core_dataset(&self) -> Option<&str> {
        let flagged: Vec<&String> = self.datasets.iter().filter(|(_, d)| d.core).map(|(k, _)| k).collect();
        match (flagged.as_slice(), self.datasets.len()) {
            ([one], _) => Some(one.as_str()),
            ([], 1) => self.datasets.keys().next().map(String::as_str),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RankTable {
    pub models: Vec<String>,
    pub tasks: BTreeMap<String, TaskRanks>,
    /// Cells that could not be ranked, and why.
    pub issues: Vec<String>,
}

impl RankTable {
    pub fn from_cells(cells: &[Cell]) -> RankTable {
        let mut table = RankTable::default();
        let mut models = BTreeSet::new();
        for c in cells {
            models.insert(c.model.clone());
            let task = table.tasks.entry(c.task.clone()).or_insert_with(|| TaskRanks {
                higher_is_better: c.higher_is_better,
                ..TaskRanks::default()
            });
            if task.higher_is_better != c.higher_is_better {
                table.issues.push(format!("task {}: conflicting metric directions", c.task));
            }
            let ds = task.datasets.entry(c.dataset.clone()).or_default();
            ds.core |= c.core_dataset;
            if !c.score.is_finite() {
                table.issues.push(format!("{}/{}: non-finite score for {}", c.task, c.dataset, c.model));
                continue;
            }
            if ds.scores.insert(c.model.clone(), c.score).is_some() {
                table.issues.push(format!("{}/{}: duplicate score for {}", c.task, c.dataset, c.model));
            }
        }
        table.models = models.into_iter().collect();
        for (task_id, task) in &mut table.tasks {
            let hib = task.higher_is_better;
            for (ds_id, ds) in &mut task.datasets {
                let names: Vec<&String> = ds.scores.keys().collect();
                let values: Vec<f64> = ds.scores.values().copied().collect();
                match rank_within_task(&values, hib) {
                    Ok(r) => ds.ranks = names.into_iter().cloned().zip(r).collect(),
                    Err(e) => table.issues.push(format!("{task_id}/{ds_id}: {e}")),
                }
                for m in &table.models {
                    if !ds.scores.contains_key(m) {
                        table.issues.push(format!("{task_id}/{ds_id}: no score for {m}"));
                    }
                }
            }
        }
        table
    }

    /// Task-level rank of each model under a variant.
    pub fn task_ranks(&self, variant: Variant) -> BTreeMap<String, BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for (task_id, task) in &self.tasks {
            let chosen: Vec<&DatasetRanks> = match variant {
                Variant::Core => task.core_dataset().and_then(|d| task.datasets.get(d)).into_iter().collect(),
                Variant::Full => task.datasets.values().collect(),
            };
            let mut per_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for ds in chosen {
                for (m, r) in &ds.ranks {
                    per_model.entry(m.clone()).or_default().push(*r);
                }
            }
            let ranks: BTreeMap<String, f64> = per_model
                .into_iter()
                .map(|(m, rs)| (m, rs.iter().sum::<f64>() / rs.len() as f64))
                .collect();
            if !ranks.is_empty() {
                out.insert(task_id.clone(), ranks);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeanRank {
    pub model: String,
    pub mean_rank: f64,
    /// Tasks the model was ranked on.
    pub coverage: usize,
    pub n_tasks: usize,
}

fn aggregate(table: &RankTable, variant: Variant) -> Vec<MeanRank> {
    let per_task = table.task_ranks(variant);
    let n_tasks = per_task.len();
    table
        .models
        .iter()
        .filter_map(|m| {
            let rs: Vec<f64> = per_task.values().filter_map(|t| t.get(m).copied()).collect();
            (!rs.is_empty()).then(|| MeanRank {
                model: m.clone(),
                mean_rank: rs.iter().sum::<f64>() / rs.len() as f64,
                coverage: rs.len(),
                n_tasks,
            })
        })
        .collect()
}

/// Mean over tasks of the rank on each task's core dataset.
pub fn aggregate_core(table: &RankTable) -> Vec<MeanRank> {
    aggregate(table, Variant::Core)
}

/// Mean over tasks of the mean rank across that task's datasets.
pub fn aggregate_full(table: &RankTable) -> Vec<MeanRank> {
    aggregate(table, Variant::Full)
}

pub fn aggregate_variant(table: &RankTable, variant: Variant) -> Vec<MeanRank> {
    aggregate(table, variant)
}

/// Sorted by mean rank, then model id.
pub fn ordered(mut ranks: Vec<MeanRank>) -> Vec<MeanRank> {
    ranks.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank).then_with(|| a.model.cmp(&b.model)));
    ranks
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankStd {
    pub model: String,
    pub task: String,
    pub std: f64,
    pub n_datasets: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RankStdReport {
    pub rows: Vec<RankStd>,
    /// `(task, datasets)` pairs below the floor.
    pub excluded: Vec<(String, usize)>,
}

/// Sample standard deviation of each model's ranks across a task's datasets.
pub fn rank_std_within_task(table: &RankTable, min_datasets: usize) -> RankStdReport {
    let mut out = RankStdReport::default();
    let floor = min_datasets.max(2);
    for (task_id, task) in &table.tasks {
        if task.datasets.len() < floor {
            out.excluded.push((task_id.clone(), task.datasets.len()));
            continue;
        }
        for m in &table.models {
            let rs: Vec<f64> = task.datasets.values().filter_map(|d| d.ranks.get(m).copied()).collect();
            if rs.len() < floor {
                continue;
            }
            let mean = rs.iter().sum::<f64>() / rs.len() as f64;
            let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rs.len() - 1) as f64;
            out.rows.push(RankStd { model: m.clone(), task: task_id.clone(), std: var.sqrt(), n_datasets: rs.len() });
        }
    }
    out
}

/// Kendall τ_b between two aggregated rankings over their shared models.
pub fn compare_rankings(a: &[MeanRank], b: &[MeanRank]) -> Result<Kendall, RankError> {
    let left: BTreeMap<&str, f64> = a.iter().map(|r| (r.model.as_str(), r.mean_rank)).collect();
    let right: BTreeMap<&str, f64> = b.iter().map(|r| (r.model.as_str(), r.mean_rank)).collect();
    if left.keys().ne(right.keys()) {
        return Err(RankError::Mismatch("rankings cover different models".into()));
    }
    let xs: Vec<f64> = left.values().copied().collect();
    let ys: Vec<f64> = right.values().copied().collect();
    kendall_tau(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(model: &str, task: &str, dataset: &str, core: bool, score: f64) -> Cell {
        Cell {
            model: model.into(),
            task: task.into(),
            dataset: dataset.into(),
            core_dataset: core,
            higher_is_better: true,
            score,
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_within_task(&[0.9, 0.7, 0.8], true).unwrap(), vec![1.0, 3.0, 2.0]);
        assert_eq!(rank_within_task(&[0.9, 0.9, 0.5], true).unwrap(), vec![1.5, 1.5, 3.0]);
        assert_eq!(rank_within_task(&[0.9, 0.7, 0.8], false).unwrap(), vec![3.0, 1.0, 2.0]);
        assert!(rank_within_task(&[0.9], true).is_err());
        assert!(rank_within_task(&[0.9, f64::NAN], true).is_err());
    }

    #[test]
    fn core_and_full_aggregation() {
        let cells = vec![
            cell("a", "t1", "d1", true, 0.9),
            cell("b", "t1", "d1", true, 0.8),
            cell("c", "t1", "d1", true, 0.7),
            cell("a", "t2", "d1", true, 0.5),
            cell("b", "t2", "d1", true, 0.6),
            cell("c", "t2", "d1", true, 0.4),
            cell("a", "t2", "d2", false, 0.1),
            cell("b", "t2", "d2", false, 0.2),
            cell("c", "t2", "d2", false, 0.3),
        ];
        let table = RankTable::from_cells(&cells);
        assert!(table.issues.is_empty(), "{:?}", table.issues);
        let core = aggregate_core(&table);
        let full = aggregate_full(&table);
        let get = |v: &[MeanRank], m: &str| v.iter().find(|r| r.model == m).unwrap().mean_rank;
        assert_eq!(get(&core, "a"), 1.5);
        assert_eq!(get(&core, "c"), 3.0);
        // a: t1 → 1, t2 → mean(2, 3) = 2.5.
        assert_eq!(get(&full, "a"), 1.75);
        assert_eq!(get(&full, "c"), 2.5);
    }

    #[test]
    fn full_equals_core_on_single_dataset_tasks() {
        let cells: Vec<Cell> = ["t1", "t2", "t3"]
            .iter()
            .enumerate()
            .flat_map(|(k, t)| {
                ["a", "b", "c", "d"]
                    .iter()
                    .enumerate()
                    .map(move |(i, m)| cell(m, t, "only", false, ((i * 7 + k * 3) % 5) as f64))
            })
            .collect();
        let table = RankTable::from_cells(&cells);
        assert_eq!(aggregate_core(&table), aggregate_full(&table));
    }

    #[test]
    fn missing_cell_lowers_coverage() {
        let cells = vec![
            cell("a", "t1", "d", true, 0.9),
            cell("b", "t1", "d", true, 0.8),
            cell("a", "t2", "d", true, 0.9),
            cell("b", "t2", "d", true, 0.8),
            cell("c", "t2", "d", true, 0.1),
        ];
        let table = RankTable::from_cells(&cells);
        let c = aggregate_core(&table).into_iter().find(|r| r.model == "c").unwrap();
        assert_eq!((c.mean_rank, c.coverage, c.n_tasks), (3.0, 1, 2));
        assert!(table.issues.iter().any(|i| i.contains("no score for c")));
    }

    #[test]
    fn rank_std_floor() {
        let mut cells = Vec::new();
        for d in 0..5 {
            let ds = format!("d{d}");
            cells.push(cell("a", "t", &ds, d == 0, if d % 2 == 0 { 1.0 } else { 0.0 }));
            cells.push(cell("b", "t", &ds, d == 0, 0.5));
        }
        let table = RankTable::from_cells(&cells);
        let rep = rank_std_within_task(&table, RANK_STD_MIN_DATASETS);
        let b = rep.rows.iter().find(|r| r.model == "b").unwrap();
        let a = rep.rows.iter().find(|r| r.model == "a").unwrap();
        assert_eq!(a.n_datasets, 5);
        // a has ranks [1,2,1,2,1]: sample std = sqrt(0.3).
        assert!((a.std - 0.3f64.sqrt()).abs() < 1e-15);
        assert!((b.std - 0.3f64.sqrt()).abs() < 1e-15);

        let four: Vec<Cell> = cells.into_iter().filter(|c| c.dataset != "d4").collect();
        let rep = rank_std_within_task(&RankTable::from_cells(&four), RANK_STD_MIN_DATASETS);
        assert!(rep.rows.is_empty());
        assert_eq!(rep.excluded, vec![("t".to_string(), 4)]);
    }

    #[test]
    fn rank_std_relaxed_floor() {
        let mut cells = Vec::new();
        for (d, (sa, sb)) in [(0.9, 0.1), (0.0, 0.5)].iter().enumerate() {
            let ds = format!("d{d}");
            cells.push(cell("a", "t", &ds, false, *sa));
            cells.push(cell("b", "t", &ds, false, *sb));
            for (k, m) in ["c", "d", "e"].iter().enumerate() {
                cells.push(cell(m, "t", &ds, false, 0.2 + 0.1 * k as f64));
            }
        }
        let table = RankTable::from_cells(&cells);
        let rep = rank_std_within_task(&table, 2);
        let a = rep.rows.iter().find(|r| r.model == "a").unwrap();
        // a ranks 1 then 5.
        assert!((a.std - 8f64.sqrt()).abs() < 1e-12);
        assert!((a.std - 2.828).abs() < 1e-3);
    }

    #[test]
    fn monotone_transform_keeps_ranks() {
        let s = [0.3, -1.2, 0.3, 2.5, 0.0];
        let t: Vec<f64> = s.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert_eq!(rank_within_task(&s, true).unwrap(), rank_within_task(&t, true).unwrap());
        let total: f64 = rank_within_task(&s, true).unwrap().iter().sum();
        assert_eq!(total, 15.0);
    }

    #[test]
    fn compare_requires_same_models() {
        let r = |m: &str, v: f64| MeanRank { model: m.into(), mean_rank: v, coverage: 1, n_tasks: 1 };
        let a = vec![r("x", 1.0), r("y", 2.0), r("z", 3.0)];
        let rev = vec![r("x", 3.0), r("y", 2.0), r("z", 1.0)];
        assert_eq!(compare_rankings(&a, &a).unwrap().tau, 1.0);
        assert_eq!(compare_rankings(&a, &rev).unwrap().tau, -1.0);
        assert!(compare_rankings(&a, &a[..2]).is_err());
    }
}
