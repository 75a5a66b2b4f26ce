//! Train/valid/test assignment.
//!
//! Every strategy is a pure function of the example tags, the policy and the seed.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{SplitKind, SplitPolicy};
use crate::domain::{canonical_json, hash_config, ExampleSet, SplitLabel, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("{found} {unit} cannot fill {needed} splits")]
    TooFewUnits { unit: &'static str, found: usize, needed: usize },
    #[error("example `{0}` is not covered by the split manifest")]
    Uncovered(String),
    #[error("{0} examples have no concept id")]
    MissingConcepts(usize),
    #[error("subject {subject} has {found} {unit}, cannot hold out {holdout}")]
    NotEnoughHeldOut { subject: String, unit: &'static str, found: usize, holdout: usize },
    #[error("cannot parse holdout `{0}`")]
    BadHoldout(String),
    #[error("unknown stratification key `{0}`")]
    BadStratify(String),
    #[error("invalid ratios test={test} valid={valid}")]
    BadRatio { test: f64, valid: f64 },
    #[error("split manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}

/// `max(1, floor(ratio * n + 0.5))` for a positive ratio, else 0.
pub fn split_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    ((ratio * n as f64 + 0.5).floor() as usize).max(1)
}

fn check_ratios(test: f64, valid: f64) -> Result<(), SplitError> {
    let ok = test > 0.0 && test < 1.0 && (0.0..1.0).contains(&valid) && test + valid < 1.0;
    if ok {
        Ok(())
    } else {
        Err(SplitError::BadRatio { test, valid })
    }
}

/// Per-stratum quotas summing to `total`: floors first, then the largest
/// remainders, larger strata winning ties. Each quota is capped by `caps`.
fn apportion(sizes: &[usize], caps: &[usize], ratio: f64, total: usize) -> Vec<usize> {
    let ideal: Vec<f64> = sizes.iter().map(|&m| ratio * m as f64).collect();
    let mut quota: Vec<usize> = ideal.iter().zip(caps).map(|(q, &c)| (q.floor() as usize).min(c)).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (ideal[a] - quota[a] as f64, ideal[b] - quota[b] as f64);
        rb.partial_cmp(&ra).unwrap_or(Ordering::Equal).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(quota.iter().sum());
    // Second pass lets strata go past their ceiling only if caps elsewhere forced it.
    for relaxed in [false, true] {
        for &s in &order {
            if left == 0 {
                break;
            }
            let limit = if relaxed { caps[s] } else { (ideal[s].ceil() as usize).min(caps[s]) };
            while quota[s] < limit && left > 0 {
                quota[s] += 1;
                left -= 1;
                if !relaxed {
                    break;
                }
            }
        }
    }
    quota
}

/// Assigns each unit (subject, concept, example) to a split.
///
/// `units` holds `(unit id, stratum)`; units are sorted by id before a seeded shuffle.
fn assign_units(
    unit: &'static str,
    units: &[(String, String)],
    test_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<BTreeMap<String, SplitLabel>, SplitError> {
    check_ratios(test_ratio, valid_ratio)?;
    let n = units.len();
    let n_test = split_count(test_ratio, n);
    let n_valid = split_count(valid_ratio, n);
    let needed = 2 + usize::from(n_valid > 0);
    if n < needed || n_test + n_valid >= n {
        return Err(SplitError::TooFewUnits { unit, found: n, needed: needed.max(n_test + n_valid + 1) });
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, s) in units {
        strata.entry(s.as_str()).or_default().push(id.as_str());
    }
    let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
    let test_q = apportion(&sizes, &sizes, test_ratio, n_test);
    let caps: Vec<usize> = sizes.iter().zip(&test_q).map(|(m, t)| m - t).collect();
    let valid_q = apportion(&sizes, &caps, valid_ratio, n_valid);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for (k, ids) in strata.into_values().enumerate() {
        let mut ids = ids;
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            let label = if i < test_q[k] {
                SplitLabel::Test
            } else if i < test_q[k] + valid_q[k] {
                SplitLabel::Valid
            } else {
                SplitLabel::Train
            };
            out.insert(id.to_string(), label);
        }
    }
    Ok(out)
}

/// Per-example stratification value.
pub fn strata_of(es: &ExampleSet, key: &str) -> Result<Vec<String>, SplitError> {
    Ok(match key {
        "description" => es.descriptions.clone(),
        "subject" | "subject_id" => es.subject_ids.clone(),
        "concept" | "concept_id" => es.concept_ids.iter().map(|c| c.clone().unwrap_or_default()).collect(),
        "target" | "label" => es.targets.iter().map(target_key).collect(),
        other => return Err(SplitError::BadStratify(other.to_string())),
    })
}

fn target_key(t: &Target) -> String {
    match t {
        Target::ClassIndex(k) => k.to_string(),
        Target::LabelVector(v) => v.iter().map(|&b| if b { '1' } else { '0' }).collect(),
        other => serde_json::to_string(other).unwrap_or_default(),
    }
}

pub fn split_predefined(es: &ExampleSet, map: &BTreeMap<String, SplitLabel>) -> Result<ExampleSet, SplitError> {
    let labels = es
        .example_ids
        .iter()
        .map(|id| map.get(id).copied().ok_or_else(|| SplitError::Uncovered(id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(es.with_labels(labels))
}

pub fn split_cross_subject(
    es: &ExampleSet,
    test_ratio: f64,
    valid_ratio: f64,
    stratify_by: Option<&str>,
    seed: u64,
) -> Result<ExampleSet, SplitError> {
    let strata = match stratify_by {
        Some(k) => Some(strata_of(es, k)?),
        None => None,
    };
    // A subject's stratum is its most frequent value, smallest on ties.
    let mut counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (i, s) in es.subject_ids.iter().enumerate() {
        let v = strata.as_ref().map_or("", |st| st[i].as_str());
        *counts.entry(s).or_default().entry(v).or_insert(0) += 1;
    }
    let units: Vec<(String, String)> = counts
        .iter()
        .map(|(s, c)| {
            let best = c.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(v, _)| *v).unwrap_or("");
            (s.to_string(), best.to_string())
        })
        .collect();
    let map = assign_units("subjects", &units, test_ratio, valid_ratio, seed)?;
    Ok(es.with_labels(es.subject_ids.iter().map(|s| map[s]).collect()))
}

pub fn split_leave_concept_out(
    es: &ExampleSet,
    test_ratio: f64,
    valid_ratio: f64,
    seed: u64,
) -> Result<ExampleSet, SplitError> {
    let missing = es.concept_ids.iter().filter(|c| c.is_none()).count();
    if missing > 0 {
        return Err(SplitError::MissingConcepts(missing));
    }
    let concepts: BTreeSet<&str> = es.concept_ids.iter().flatten().map(String::as_str).collect();
    let units: Vec<(String, String)> = concepts.into_iter().map(|c| (c.to_string(), String::new())).collect();
    let map = assign_units("concepts", &units, test_ratio, valid_ratio, seed)?;
    Ok(es.with_labels(es.concept_ids.iter().flatten().map(|c| map[c]).collect()))
}

pub fn split_random(
    es: &ExampleSet,
    test_ratio: f64,
    valid_ratio: f64,
    stratify_by: Option<&str>,
    seed: u64,
) -> Result<ExampleSet, SplitError> {
    let strata = match stratify_by {
        Some(k) => strata_of(es, k)?,
        None => vec![String::new(); es.len()],
    };
    // Positional keys keep duplicate example ids apart.
    let units: Vec<(String, String)> = strata.into_iter().enumerate().map(|(i, s)| (format!("{i:09}"), s)).collect();
    let map = assign_units("examples", &units, test_ratio, valid_ratio, seed)?;
    Ok(es.with_labels((0..es.len()).map(|i| map[&format!("{i:09}")]).collect()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Holdout {
    LastSessions(usize),
    LastRuns(usize),
    Sessions(Vec<String>),
}

impl std::str::FromStr for Holdout {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Holdout, SplitError> {
        let bad = || SplitError::BadHoldout(s.to_string());
        let words: Vec<&str> = s.split_whitespace().collect();
        match words.as_slice() {
            ["last", n, unit] => {
                let n: usize = n.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                match *unit {
                    "session" | "sessions" => Ok(Holdout::LastSessions(n)),
                    "run" | "runs" => Ok(Holdout::LastRuns(n)),
                    _ => Err(bad()),
                }
            }
            ["sessions", rest @ ..] | ["session", rest @ ..] if !rest.is_empty() => {
                let names: Vec<String> =
                    rest.join(" ").split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
                if names.is_empty() {
                    Err(bad())
                } else {
                    Ok(Holdout::Sessions(names))
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Orders tags so that `run-2` precedes `run-10`.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn parts(s: &str) -> Vec<(bool, String)> {
        let mut out: Vec<(bool, String)> = Vec::new();
        for ch in s.chars() {
            let d = ch.is_ascii_digit();
            match out.last_mut() {
                Some((kind, buf)) if *kind == d => buf.push(ch),
                _ => out.push((d, ch.to_string())),
            }
        }
        out
    }
    let (pa, pb) = (parts(a), parts(b));
    for (x, y) in pa.iter().zip(&pb) {
        let o = match (x, y) {
            ((true, u), (true, v)) => {
                let (u, v) = (u.trim_start_matches('0'), v.trim_start_matches('0'));
                u.len().cmp(&v.len()).then_with(|| u.cmp(v))
            }
            _ => x.1.cmp(&y.1),
        };
        if o != Ordering::Equal {
            return o;
        }
    }
    pa.len().cmp(&pb.len()).then_with(|| a.cmp(b))
}

/// Holds out trailing sessions or runs per subject; validation is a seeded,
/// target-stratified example-level carve-out of what remains.
pub fn split_within_subject(
    es: &ExampleSet,
    holdout: &Holdout,
    valid_ratio: f64,
    seed: u64,
) -> Result<ExampleSet, SplitError> {
    let mut is_test = vec![false; es.len()];
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match holdout {
        Holdout::LastSessions(_) | Holdout::Sessions(_) => {
            for (i, s) in es.subject_ids.iter().enumerate() {
                groups.entry(s.clone()).or_default().push(i);
            }
        }
        Holdout::LastRuns(_) => {
            for i in 0..es.len() {
                groups.entry(format!("{}\u{1f}{}", es.subject_ids[i], es.session_ids[i])).or_default().push(i);
            }
        }
    }
    for (key, idx) in &groups {
        let tags: &Vec<String> = match holdout {
            Holdout::LastRuns(_) => &es.run_ids,
            _ => &es.session_ids,
        };
        let mut distinct: Vec<&str> = idx.iter().map(|&i| tags[i].as_str()).collect();
        distinct.sort_by(|a, b| natural_cmp(a, b));
        distinct.dedup();
        let subject = key.split('\u{1f}').next().unwrap_or_default().to_string();
        let held: BTreeSet<&str> = match holdout {
            Holdout::LastSessions(n) | Holdout::LastRuns(n) => {
                if distinct.len() <= *n {
                    let unit = if matches!(holdout, Holdout::LastRuns(_)) { "runs" } else { "sessions" };
                    return Err(SplitError::NotEnoughHeldOut { subject, unit, found: distinct.len(), holdout: *n });
                }
                distinct[distinct.len() - n..].iter().copied().collect()
            }
            Holdout::Sessions(names) => {
                let held: BTreeSet<&str> =
                    distinct.iter().copied().filter(|s| names.iter().any(|n| n == s)).collect();
                if held.len() == distinct.len() {
                    return Err(SplitError::NotEnoughHeldOut {
                        subject,
                        unit: "sessions",
                        found: distinct.len(),
                        holdout: held.len(),
                    });
                }
                held
            }
        };
        for &i in idx {
            is_test[i] = held.contains(tags[i].as_str());
        }
    }
    if !is_test.iter().any(|&t| t) {
        return Err(SplitError::BadHoldout("no example falls in the held-out sessions".into()));
    }
    let mut labels: Vec<SplitLabel> =
        is_test.iter().map(|&t| if t { SplitLabel::Test } else { SplitLabel::Train }).collect();
    let pool: Vec<usize> = (0..es.len()).filter(|&i| !is_test[i]).collect();
    let n_valid = split_count(valid_ratio, es.len()).min(pool.len().saturating_sub(1));
    if n_valid > 0 {
        let strata = strata_of(es, "target")?;
        let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for &i in &pool {
            by.entry(strata[i].as_str()).or_default().push(i);
        }
        let sizes: Vec<usize> = by.values().map(Vec::len).collect();
        let ratio = n_valid as f64 / pool.len() as f64;
        let quota = apportion(&sizes, &sizes, ratio, n_valid);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (k, mut members) in by.into_values().enumerate() {
            members.shuffle(&mut rng);
            for &i in members.iter().take(quota[k]) {
                labels[i] = SplitLabel::Valid;
            }
        }
    }
    Ok(es.with_labels(labels))
}

/// Reads a `{example id: "train"|"valid"|"test"}` JSON manifest.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, SplitLabel>, SplitError> {
    let err = |reason: String| SplitError::Manifest { path: path.display().to_string(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

/// Applies `policy` with `seed`; predefined manifests are resolved against `base`.
pub fn apply_split(es: &ExampleSet, policy: &SplitPolicy, seed: u64, base: Option<&Path>) -> Result<ExampleSet, SplitError> {
    let strat = policy.stratify_by.as_deref();
    match policy.kind {
        SplitKind::Predefined => {
            let rel = policy.holdout.as_deref().ok_or_else(|| SplitError::BadHoldout(String::new()))?;
            let path = match base {
                Some(b) if Path::new(rel).is_relative() => b.join(rel),
                _ => Path::new(rel).to_path_buf(),
            };
            split_predefined(es, &read_manifest(&path)?)
        }
        SplitKind::CrossSubject => split_cross_subject(es, policy.test_ratio, policy.valid_ratio, strat, seed),
        SplitKind::LeaveConceptOut => split_leave_concept_out(es, policy.test_ratio, policy.valid_ratio, seed),
        SplitKind::Random => split_random(es, policy.test_ratio, policy.valid_ratio, strat, seed),
        SplitKind::WithinSubject => {
            let h: Holdout = policy.holdout.as_deref().unwrap_or_default().parse()?;
            split_within_subject(es, &h, policy.valid_ratio, seed)
        }
    }
}

/// Example id to split label, in example order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    #[serde(with = "crate::domain::hex_u64")]
    pub split_hash: u64,
    pub example_ids: Vec<String>,
    pub labels: Vec<SplitLabel>,
}

impl SplitManifest {
    pub fn from_examples(es: &ExampleSet) -> SplitManifest {
        let labels: Vec<SplitLabel> = es.split_labels.iter().map(|l| l.unwrap_or(SplitLabel::Train)).collect();
        SplitManifest { split_hash: split_hash(&es.example_ids, &labels), example_ids: es.example_ids.clone(), labels }
    }

    /// Plain `{id: label}` map, the form [`read_manifest`] accepts.
    pub fn to_map(&self) -> BTreeMap<String, SplitLabel> {
        self.example_ids.iter().cloned().zip(self.labels.iter().copied()).collect()
    }

    /// Reads a manifest and checks its stored hash against its contents.
    pub fn load(path: &Path) -> Result<SplitManifest, SplitError> {
        let err = |reason: String| SplitError::Manifest { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let m: SplitManifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if m.example_ids.len() != m.labels.len() {
            return Err(err(format!("{} ids but {} labels", m.example_ids.len(), m.labels.len())));
        }
        let h = split_hash(&m.example_ids, &m.labels);
        if h != m.split_hash {
            return Err(err(format!("stored hash {:016x} does not match contents ({h:016x})", m.split_hash)));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), SplitError> {
        let err = |reason: String| SplitError::Manifest { path: path.display().to_string(), reason };
        let text = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        crate::data::atomic_write(path, text.as_bytes()).map_err(|e| err(e.to_string()))
    }

    pub fn ids_of(&self, label: SplitLabel) -> Vec<&str> {
        self.example_ids.iter().zip(&self.labels).filter(|(_, l)| **l == label).map(|(id, _)| id.as_str()).collect()
    }
}

pub fn split_hash(example_ids: &[String], labels: &[SplitLabel]) -> u64 {
    let pairs: Vec<(&String, &SplitLabel)> = example_ids.iter().zip(labels).collect();
    hash_config(&canonical_json(&pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    pub(crate) fn grid(subjects: usize, sessions: usize, runs: usize, per_run: usize) -> ExampleSet {
        let n = subjects * sessions * runs * per_run;
        let mut es = ExampleSet::empty(1, 2, 10.0, 0.0, 0.2);
        es.windows = Array3::zeros((n, 1, 2));
        for s in 0..subjects {
            for ses in 0..sessions {
                for r in 0..runs {
                    for k in 0..per_run {
                        let i = es.example_ids.len();
                        es.example_ids.push(format!("sub-{s:02}_ses-{ses}/{i:05}"));
                        es.subject_ids.push(format!("sub-{s:02}"));
                        es.session_ids.push(format!("ses-{}", ses + 1));
                        es.run_ids.push(format!("run-{}", r + 1));
                        es.concept_ids.push(Some(format!("c{:04}", k)));
                        es.descriptions.push(format!("class_{}", k % 2));
                        es.targets.push(Target::ClassIndex(k % 2));
                        es.split_labels.push(None);
                    }
                }
            }
        }
        es
    }

    fn subjects_in(es: &ExampleSet, l: SplitLabel) -> BTreeSet<String> {
        es.indices_of(l).into_iter().map(|i| es.subject_ids[i].clone()).collect()
    }

    #[test]
    fn ten_subjects_two_two_six() {
        let out = split_cross_subject(&grid(10, 1, 1, 4), 0.2, 0.2, None, 0).unwrap();
        let n = |l| subjects_in(&out, l).len();
        assert_eq!((n(SplitLabel::Test), n(SplitLabel::Valid), n(SplitLabel::Train)), (2, 2, 6));
        assert_eq!(out, split_cross_subject(&grid(10, 1, 1, 4), 0.2, 0.2, None, 0).unwrap());
    }

    #[test]
    fn two_subjects_is_an_error() {
        assert!(matches!(
            split_cross_subject(&grid(2, 1, 1, 4), 0.2, 0.2, None, 0),
            Err(SplitError::TooFewUnits { .. })
        ));
    }

    #[test]
    fn ingestion_order_does_not_matter() {
        let es = grid(7, 1, 1, 3);
        let rev: Vec<usize> = (0..es.len()).rev().collect();
        let a = split_cross_subject(&es, 0.2, 0.2, None, 3).unwrap();
        let b = split_cross_subject(&es.select(&rev), 0.2, 0.2, None, 3).unwrap();
        assert_eq!(subjects_in(&a, SplitLabel::Test), subjects_in(&b, SplitLabel::Test));
    }

    #[test]
    fn hundred_concepts_twenty_test() {
        let out = split_leave_concept_out(&grid(2, 1, 1, 100), 0.2, 0.2, 1).unwrap();
        let concepts = |l| -> BTreeSet<String> {
            out.indices_of(l).into_iter().filter_map(|i| out.concept_ids[i].clone()).collect()
        };
        assert_eq!(concepts(SplitLabel::Test).len(), 20);
        assert!(concepts(SplitLabel::Train).is_disjoint(&concepts(SplitLabel::Test)));
        assert!(split_leave_concept_out(&grid(3, 1, 1, 1), 0.2, 0.2, 0).is_err());
    }

    #[test]
    fn random_counts_and_stratification() {
        let es = grid(1, 1, 1, 100);
        let out = split_random(&es, 0.2, 0.2, None, 0).unwrap();
        let c = out.split_counts();
        assert_eq!((c[&SplitLabel::Test], c[&SplitLabel::Valid], c[&SplitLabel::Train]), (20, 20, 60));
        let out = split_random(&es, 0.2, 0.2, Some("description"), 5).unwrap();
        for l in [SplitLabel::Train, SplitLabel::Valid, SplitLabel::Test] {
            let idx = out.indices_of(l);
            let ones = idx.iter().filter(|&&i| out.descriptions[i] == "class_1").count();
            assert!((2 * ones as i64 - idx.len() as i64).abs() <= 2, "{l}: {ones}/{}", idx.len());
        }
    }

    #[test]
    fn last_session_is_test() {
        let out = split_within_subject(&grid(3, 3, 1, 6), &"last 1 sessions".parse().unwrap(), 0.2, 0).unwrap();
        for i in 0..out.len() {
            assert_eq!(out.session_ids[i] == "ses-3", out.split_labels[i] == Some(SplitLabel::Test));
        }
        assert!(out.split_counts()[&SplitLabel::Valid] > 0);
    }

    #[test]
    fn last_four_runs_per_recording() {
        let out = split_within_subject(&grid(2, 1, 12, 2), &"last 4 runs".parse().unwrap(), 0.1, 0).unwrap();
        for i in 0..out.len() {
            let run: usize = out.run_ids[i][4..].parse().unwrap();
            assert_eq!(run > 8, out.split_labels[i] == Some(SplitLabel::Test), "{}", out.run_ids[i]);
        }
    }

    #[test]
    fn single_session_subject_is_an_error() {
        let h: Holdout = "last 1 sessions".parse().unwrap();
        assert!(matches!(
            split_within_subject(&grid(3, 1, 1, 4), &h, 0.2, 0),
            Err(SplitError::NotEnoughHeldOut { .. })
        ));
    }

    #[test]
    fn holdout_parsing() {
        assert_eq!("sessions ses-2, ses-3".parse::<Holdout>().unwrap(), Holdout::Sessions(vec!["ses-2".into(), "ses-3".into()]));
        assert!("first 2 runs".parse::<Holdout>().is_err());
        assert!("last 0 runs".parse::<Holdout>().is_err());
    }

    #[test]
    fn natural_order() {
        let mut v = vec!["run-10", "run-2", "run-1"];
        v.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(v, ["run-1", "run-2", "run-10"]);
    }

    #[test]
    fn predefined_copies_and_names_missing() {
        let es = grid(1, 1, 1, 3);
        let mut map: BTreeMap<String, SplitLabel> =
            es.example_ids.iter().cloned().zip([SplitLabel::Train, SplitLabel::Valid, SplitLabel::Test]).collect();
        let out = split_predefined(&es, &map).unwrap();
        assert_eq!(out.split_labels, vec![Some(SplitLabel::Train), Some(SplitLabel::Valid), Some(SplitLabel::Test)]);
        let gone = es.example_ids[1].clone();
        map.remove(&gone);
        assert_eq!(split_predefined(&es, &map), Err(SplitError::Uncovered(gone)));
        let empty = es.select(&[]);
        assert_eq!(split_predefined(&empty, &map).unwrap().len(), 0);
    }

    #[test]
    fn manifest_round_trip_and_hash() {
        let out = split_random(&grid(1, 1, 1, 10), 0.2, 0.2, None, 0).unwrap();
        let m = SplitManifest::from_examples(&out);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, serde_json::to_string(&m.to_map()).unwrap()).unwrap();
        let back = split_predefined(&out, &read_manifest(&p).unwrap()).unwrap();
        assert_eq!(SplitManifest::from_examples(&back).split_hash, m.split_hash);
        let other = SplitManifest::from_examples(&split_random(&out, 0.2, 0.2, None, 1).unwrap());
        assert_ne!(other.split_hash, m.split_hash);
    }

    #[test]
    fn apportion_sums_and_stays_near_round() {
        let sizes = [7, 5, 3, 1];
        let q = apportion(&sizes, &sizes, 0.2, split_count(0.2, 16));
        assert_eq!(q.iter().sum::<usize>(), 3);
        for (m, k) in sizes.iter().zip(&q) {
            let r = (0.2 * *m as f64 + 0.5).floor() as i64;
            assert!((*k as i64 - r).abs() <= 1);
        }
    }
}
