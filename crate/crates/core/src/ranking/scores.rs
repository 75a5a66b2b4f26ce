//! Seed-level run records reduced to one representative score per cell.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;

use super::Cell;
use crate::domain::{RunRecord, RunStatus};
use crate::metrics::{self, MetricName};

/// Seed statistics for one (task, dataset, model).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreCell {
    pub model: String,
    pub task: String,
    pub dataset: String,
    pub core_dataset: bool,
    pub metric: String,
    pub higher_is_better: bool,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub sem: Option<f64>,
    pub dummy_mean: f64,
    pub normalized_mean: Option<f64>,
    pub normalized_sem: Option<f64>,
    /// Filled in against the best model of the same task and dataset.
    pub max_normalized: Option<f64>,
    pub pretrain_overlap: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ScoreTable {
    pub cells: Vec<ScoreCell>,
    pub issues: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl ScoreTable {
    /// Later records for the same (model, task, dataset, seed) replace earlier ones.
    pub fn from_records(records: &[RunRecord]) -> ScoreTable {
        let mut issues = Vec::new();
        let mut latest: BTreeMap<(String, String, String, u64), &RunRecord> = BTreeMap::new();
        for r in records {
            latest.insert((r.task_id.clone(), r.dataset_id.clone(), r.model_id.clone(), r.seed), r);
        }
        let mut groups: BTreeMap<(String, String, String), Vec<&RunRecord>> = BTreeMap::new();
        for ((task, dataset, model, seed), r) in latest {
            match &r.status {
                RunStatus::Ok => {}
                RunStatus::Failed { reason } => {
                    issues.push(format!("{task}/{dataset}: {model} seed {seed} failed: {reason}"));
                    continue;
                }
                RunStatus::Declined { reason } => {
                    issues.push(format!("{task}/{dataset}: {model} declined: {reason}"));
                    continue;
                }
            }
            if r.headline().is_none() {
                issues.push(format!("{task}/{dataset}: {model} seed {seed} has no scores"));
                continue;
            }
            groups.entry((task, dataset, model)).or_default().push(r);
        }

        let mut cells = Vec::new();
        for ((task, dataset, model), runs) in groups {
            let metric = runs[0].headline().map(|s| s.metric_name.clone()).unwrap_or_default();
            if runs.iter().any(|r| r.headline().map(|s| &s.metric_name) != Some(&metric)) {
                issues.push(format!("{task}/{dataset}: {model} mixes headline metrics"));
            }
            let higher_is_better = MetricName::from_str(&metric).map(MetricName::higher_is_better).unwrap_or(true);
            let values: Vec<f64> = runs.iter().filter_map(|r| r.headline()).map(|s| s.value).collect();
            let dummies: Vec<f64> = runs.iter().filter_map(|r| r.headline()).map(|s| s.dummy_value).collect();
            let normalized: Option<Vec<f64>> = runs.iter().map(|r| r.headline().and_then(|s| s.normalized)).collect();
            cells.push(ScoreCell {
                model,
                task,
                dataset,
                core_dataset: runs.iter().any(|r| r.core_dataset),
                metric,
                higher_is_better,
                seeds: runs.iter().map(|r| r.seed).collect(),
                mean: mean(&values),
                sem: metrics::sem(&values).ok(),
                dummy_mean: mean(&dummies),
                normalized_mean: normalized.as_deref().map(mean),
                normalized_sem: normalized.as_deref().and_then(|v| metrics::sem(v).ok()),
                max_normalized: None,
                pretrain_overlap: runs.iter().any(|r| r.pretrain_overlap),
            });
        }

        let mut by_dataset: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, c) in cells.iter().enumerate() {
            by_dataset.entry((c.task.clone(), c.dataset.clone())).or_default().push(i);
        }
        for ((task, dataset), idx) in &by_dataset {
            let seeds = &cells[idx[0]].seeds;
            if idx.iter().any(|&i| &cells[i].seeds != seeds) {
                issues.push(format!("{task}/{dataset}: models were run with different seeds"));
            }
            let hib = cells[idx[0]].higher_is_better;
            let best = idx
                .iter()
                .map(|&i| cells[i].mean)
                .fold(None, |acc: Option<f64>, v| match acc {
                    Some(b) if (hib && b >= v) || (!hib && b <= v) => Some(b),
                    _ => Some(v),
                })
                .unwrap_or(f64::NAN);
            for &i in idx {
                let c = &mut cells[i];
                c.max_normalized = metrics::normalize_max(c.mean, c.dummy_mean, best).ok();
            }
        }
        ScoreTable { cells, issues }
    }

    pub fn rank_cells(&self) -> Vec<Cell> {
        self.cells
            .iter()
            .map(|c| Cell {
                model: c.model.clone(),
                task: c.task.clone(),
                dataset: c.dataset.clone(),
                core_dataset: c.core_dataset,
                higher_is_better: c.higher_is_better,
                score: c.mean,
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}
