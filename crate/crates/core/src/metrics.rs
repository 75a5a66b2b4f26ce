//! Evaluation metrics, retrieval aggregation and score normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ObjectiveKind, Prediction, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} truths vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("normalization denominator is zero (reference {0})")]
    ZeroDenominator(f64),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("k = {k} exceeds the {n} candidates")]
    KTooLarge { k: usize, n: usize },
    #[error("prediction {index} does not fit the objective: {reason}")]
    BadPrediction { index: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricName {
    BalancedAccuracy,
    MacroF1,
    PearsonR,
    Top5Accuracy,
    Rmse,
    MedianRank,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::BalancedAccuracy,
        MetricName::MacroF1,
        MetricName::PearsonR,
        MetricName::Top5Accuracy,
        MetricName::Rmse,
        MetricName::MedianRank,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::BalancedAccuracy => "BalancedAcc",
            MetricName::MacroF1 => "MacroF1",
            MetricName::PearsonR => "PearsonR",
            MetricName::Top5Accuracy => "Top5Acc",
            MetricName::Rmse => "RMSE",
            MetricName::MedianRank => "MedianRank",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricName::Rmse | MetricName::MedianRank)
    }

    /// Best attainable value.
    pub fn perfect_value(self) -> f64 {
        match self {
            MetricName::Rmse => 0.0,
            MetricName::MedianRank => 1.0,
            _ => 1.0,
        }
    }

    pub fn supports(self, objective: ObjectiveKind) -> bool {
        use ObjectiveKind::*;
        match self {
            MetricName::BalancedAccuracy => objective.is_single_label(),
            MetricName::MacroF1 => objective.is_single_label() || objective == MultilabelClassification,
            MetricName::PearsonR | MetricName::Rmse => objective == Regression,
            MetricName::Top5Accuracy | MetricName::MedianRank => objective == Retrieval,
        }
    }

    /// Headline metric for an objective.
    pub fn headline_for(objective: ObjectiveKind) -> MetricName {
        match objective {
            ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
                MetricName::BalancedAccuracy
            }
            ObjectiveKind::MultilabelClassification => MetricName::MacroF1,
            ObjectiveKind::Regression => MetricName::PearsonR,
            ObjectiveKind::Retrieval => MetricName::Top5Accuracy,
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "BalancedAcc" | "BalancedAccuracy" | "balanced_accuracy" => MetricName::BalancedAccuracy,
            "MacroF1" | "F1" | "macro_f1" => MetricName::MacroF1,
            "PearsonR" | "Pearson" | "pearson_r" => MetricName::PearsonR,
            "Top5Acc" | "TopkAcc" | "top5_accuracy" => MetricName::Top5Accuracy,
            "RMSE" | "rmse" => MetricName::Rmse,
            "MedianRank" | "median_rank" => MetricName::MedianRank,
            _ => return Err(()),
        })
    }
}

/// Mean recall over the classes present in `truth`.
pub fn balanced_accuracy(truth: &[usize], pred: &[usize]) -> Result<f64, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per_class: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        let e = per_class.entry(t).or_insert((0, 0));
        e.1 += 1;
        if t == p {
            e.0 += 1;
        }
    }
    let sum: f64 = per_class.values().map(|&(hit, n)| hit as f64 / n as f64).sum();
    Ok(sum / per_class.len() as f64)
}

/// Mean per-label F1; a label with no true or predicted positives scores 0.
pub fn macro_f1(truth: &[Vec<bool>], pred: &[Vec<bool>]) -> Result<f64, MetricError> {
    if truth.len() != pred.len() {
        return Err(MetricError::LengthMismatch(truth.len(), pred.len()));
    }
    if truth.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_labels = truth[0].len();
    if n_labels == 0 {
        return Err(MetricError::Empty);
    }
    let mut total = 0.0;
    for l in 0..n_labels {
        let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
        for (t, p) in truth.iter().zip(pred) {
            match (t[l], p[l]) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fnn += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fnn;
        if tp > 0 {
            total += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(total / n_labels as f64)
}

/// Macro-F1 for single-label classification over `n_classes` one-vs-rest labels.
pub fn macro_f1_classes(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<f64, MetricError> {
    let hot = |v: &[usize]| -> Vec<Vec<bool>> { v.iter().map(|&c| (0..n_classes).map(|k| k == c).collect()).collect() };
    macro_f1(&hot(truth), &hot(pred))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson {
    pub value: f64,
    /// Either vector was constant; `value` is reported as 0.
    pub degenerate: bool,
}

pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<Pearson, MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.len() < 2 {
        return Err(MetricError::TooFew { needed: 2, got: y.len() });
    }
    // The mean of equal values need not equal them exactly, so test constancy directly.
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(y) || constant(yhat) {
        return Ok(Pearson { value: 0.0, degenerate: true });
    }
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Pearson { value: 0.0, degenerate: true });
    }
    // sqrt(x*x) == x in IEEE arithmetic, so identical vectors give exactly 1.
    let r = sxy / (sxx * syy).sqrt();
    Ok(Pearson { value: r.clamp(-1.0, 1.0), degenerate: false })
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricError::Empty);
    }
    let s: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / y.len() as f64).sqrt())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopK {
    pub accuracy: f64,
    pub median_rank: f64,
}

/// 1-based rank of candidate `truth` by cosine similarity; ties go to the lower index.
pub fn retrieval_rank(pred: &[f64], candidates: &[Vec<f64>], truth: usize) -> usize {
    let sims: Vec<f64> = candidates.iter().map(|c| cosine(pred, c)).collect();
    let s = sims[truth];
    1 + sims
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < truth))
        .count()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Fraction of queries whose true candidate ranks within the top `k`, plus the median rank.
pub fn topk_accuracy(
    preds: &[Vec<f64>],
    candidates: &[Vec<f64>],
    truth: &[usize],
    k: usize,
) -> Result<TopK, MetricError> {
    if candidates.is_empty() || preds.is_empty() {
        return Err(MetricError::Empty);
    }
    if preds.len() != truth.len() {
        return Err(MetricError::LengthMismatch(truth.len(), preds.len()));
    }
    if k > candidates.len() {
        return Err(MetricError::KTooLarge { k, n: candidates.len() });
    }
    let mut ranks: Vec<f64> = preds
        .iter()
        .zip(truth)
        .map(|(p, &t)| retrieval_rank(p, candidates, t) as f64)
        .collect();
    let hits = ranks.iter().filter(|&&r| r <= k as f64).count();
    Ok(TopK {
        accuracy: hits as f64 / preds.len() as f64,
        median_rank: median(&mut ranks),
    })
}

/// Retrieval queries after averaging repeated predictions per (subject, concept).
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalQueries {
    pub preds: Vec<Vec<f64>>,
    pub truth: Vec<usize>,
    /// Distinct test targets, ordered by concept id.
    pub candidates: Vec<Vec<f64>>,
}

/// Groups test examples by (subject, concept), averaging predicted embeddings.
///
/// Examples without a concept id are keyed by their own index.
pub fn aggregate_retrieval(
    preds: &[Vec<f64>],
    targets: &[Vec<f64>],
    subjects: &[String],
    concepts: &[Option<String>],
) -> RetrievalQueries {
    let concept_key = |i: usize| concepts[i].clone().unwrap_or_else(|| format!("#{i:08}"));
    let mut cand_index: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..targets.len() {
        cand_index.entry(concept_key(i)).or_insert(i);
    }
    let mut candidates = Vec::with_capacity(cand_index.len());
    let mut cand_pos = BTreeMap::new();
    for (pos, (key, &first)) in cand_index.iter().enumerate() {
        candidates.push(targets[first].clone());
        cand_pos.insert(key.clone(), pos);
    }
    let mut groups: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for i in 0..preds.len() {
        let e = groups
            .entry((subjects[i].clone(), concept_key(i)))
            .or_insert_with(|| (vec![0.0; preds[i].len()], 0));
        for (acc, v) in e.0.iter_mut().zip(&preds[i]) {
            *acc += v;
        }
        e.1 += 1;
    }
    let mut out = RetrievalQueries { preds: vec![], truth: vec![], candidates };
    for ((_, concept), (sum, n)) in groups {
        out.preds.push(sum.into_iter().map(|v| v / n as f64).collect());
        out.truth.push(cand_pos[&concept]);
    }
    out
}

/// Dummy-anchored normalization: 0 at the dummy, 1 at the perfect value.
pub fn normalize_score(s: f64, s_dummy: f64, s_perfect: f64) -> Result<f64, MetricError> {
    let denom = s_perfect - s_dummy;
    if denom == 0.0 {
        return Err(MetricError::ZeroDenominator(s_perfect));
    }
    Ok((s - s_dummy) / denom)
}

/// Normalization between the dummy and the best model of a task.
pub fn normalize_max(s: f64, s_dummy: f64, s_best: f64) -> Result<f64, MetricError> {
    let denom = s_best - s_dummy;
    if denom == 0.0 {
        return Err(MetricError::ZeroDenominator(s_best));
    }
    Ok((s - s_dummy) / denom)
}

/// Standard error of the mean, sample standard deviation over `sqrt(n)`.
pub fn sem(values: &[f64]) -> Result<f64, MetricError> {
    let n = values.len();
    if n < 2 {
        return Err(MetricError::TooFew { needed: 2, got: n });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    Ok(var.sqrt() / (n as f64).sqrt())
}

/// Everything needed to score predictions on a test split.
pub struct EvalInput<'a> {
    pub objective: ObjectiveKind,
    pub n_outputs: usize,
    pub targets: &'a [Target],
    pub predictions: &'a [Prediction],
    pub subjects: &'a [String],
    pub concepts: &'a [Option<String>],
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricValue {
    pub name: MetricName,
    pub value: f64,
    pub degenerate: bool,
}

/// Scores `predictions` against `targets` for each requested metric.
pub fn evaluate(input: &EvalInput<'_>, metrics: &[MetricName]) -> Result<Vec<MetricValue>, MetricError> {
    let n = input.targets.len();
    if n != input.predictions.len() {
        return Err(MetricError::LengthMismatch(n, input.predictions.len()));
    }
    if n == 0 {
        return Err(MetricError::Empty);
    }
    for (i, p) in input.predictions.iter().enumerate() {
        p.validate().map_err(|e| MetricError::BadPrediction { index: i, reason: e.to_string() })?;
        let ok = matches!(
            (input.objective, p),
            (ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification, Prediction::ClassProbs(_))
                | (ObjectiveKind::MultilabelClassification, Prediction::LabelProbs(_))
                | (ObjectiveKind::Regression, Prediction::Scalar(_))
                | (ObjectiveKind::Retrieval, Prediction::Embedding(_))
        );
        if !ok {
            return Err(MetricError::BadPrediction { index: i, reason: format!("wrong kind for {}", input.objective) });
        }
    }
    let mut out = Vec::new();
    let mut retrieval: Option<TopK> = None;
    for &m in metrics {
        let (value, degenerate) = match m {
            MetricName::BalancedAccuracy | MetricName::MacroF1 if input.objective.is_single_label() => {
                let truth = class_truth(input.targets)?;
                let pred: Vec<usize> = input.predictions.iter().map(|p| p.argmax().unwrap_or(0)).collect();
                if m == MetricName::BalancedAccuracy {
                    (balanced_accuracy(&truth, &pred)?, false)
                } else {
                    (macro_f1_classes(&truth, &pred, input.n_outputs)?, false)
                }
            }
            MetricName::MacroF1 => {
                let truth: Vec<Vec<bool>> = input
                    .targets
                    .iter()
                    .enumerate()
                    .map(|(i, t)| match t {
                        Target::LabelVector(v) => Ok(v.clone()),
                        _ => Err(MetricError::BadPrediction { index: i, reason: "target is not a label vector".into() }),
                    })
                    .collect::<Result<_, _>>()?;
                let pred: Vec<Vec<bool>> =
                    input.predictions.iter().map(|p| p.values().iter().map(|&v| v >= 0.5).collect()).collect();
                (macro_f1(&truth, &pred)?, false)
            }
            MetricName::PearsonR | MetricName::Rmse => {
                let y: Vec<f64> = input.targets.iter().map(|t| t.to_vector(1)[0]).collect();
                let yhat: Vec<f64> = input.predictions.iter().map(|p| p.values()[0]).collect();
                if m == MetricName::PearsonR {
                    let r = pearson_r(&y, &yhat)?;
                    (r.value, r.degenerate)
                } else {
                    (rmse(&y, &yhat)?, false)
                }
            }
            MetricName::Top5Accuracy | MetricName::MedianRank => {
                let tk = match retrieval {
                    Some(tk) => tk,
                    None => {
                        let preds: Vec<Vec<f64>> = input.predictions.iter().map(|p| p.values()).collect();
                        let targets: Vec<Vec<f64>> = input.targets.iter().map(|t| t.to_vector(input.n_outputs)).collect();
                        let q = aggregate_retrieval(&preds, &targets, input.subjects, input.concepts);
                        let k = 5.min(q.candidates.len());
                        let tk = topk_accuracy(&q.preds, &q.candidates, &q.truth, k)?;
                        retrieval = Some(tk);
                        tk
                    }
                };
                if m == MetricName::Top5Accuracy {
                    (tk.accuracy, false)
                } else {
                    (tk.median_rank, false)
                }
            }
            MetricName::BalancedAccuracy => {
                return Err(MetricError::BadPrediction { index: 0, reason: format!("{m} needs a single-label objective") })
            }
        };
        out.push(MetricValue { name: m, value, degenerate });
    }
    Ok(out)
}

fn class_truth(targets: &[Target]) -> Result<Vec<usize>, MetricError> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| match t {
            Target::ClassIndex(c) => Ok(*c),
            _ => Err(MetricError::BadPrediction { index: i, reason: "target is not a class index".into() }),
        })
        .collect()
}

/// Predictions that reproduce the targets exactly (the `s_perfect` oracle).
pub fn perfect_predictions(targets: &[Target], objective: ObjectiveKind, n_outputs: usize) -> Vec<Prediction> {
    targets
        .iter()
        .map(|t| Prediction::from_values(objective, t.to_vector(n_outputs)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_examples() {
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap(), 0.75);
        assert_eq!(balanced_accuracy(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.5);
        assert_eq!(balanced_accuracy(&[2, 1, 0], &[2, 1, 0]).unwrap(), 1.0);
        assert_eq!(balanced_accuracy(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn macro_f1_examples() {
        let t = vec![vec![true, true], vec![true, false], vec![false, true], vec![false, false]];
        assert_eq!(macro_f1(&t, &t).unwrap(), 1.0);
        // label 0: P=1, R=0.5; label 1: P=0.5, R=1
        let truth = vec![vec![true, true], vec![true, false], vec![false, false]];
        let pred = vec![vec![true, true], vec![false, true], vec![false, false]];
        assert!((macro_f1(&truth, &pred).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let never = vec![vec![false, true], vec![false, false], vec![false, false]];
        let truth2 = vec![vec![true, true], vec![true, false], vec![false, false]];
        assert_eq!(macro_f1(&truth2, &never).unwrap(), 0.5 * (0.0 + 1.0));
    }

    #[test]
    fn pearson_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let up: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        let down: Vec<f64> = y.iter().map(|v| -v).collect();
        assert!((pearson_r(&y, &up).unwrap().value - 1.0).abs() < 1e-15);
        assert!((pearson_r(&y, &down).unwrap().value + 1.0).abs() < 1e-15);
        assert!((pearson_r(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap().value - 0.5).abs() < 1e-15);
        let flat = pearson_r(&y, &[5.0; 4]).unwrap();
        assert_eq!(flat, Pearson { value: 0.0, degenerate: true });
        // Their mean is not exactly 0.1.
        let tenths = [0.1; 7];
        assert_ne!(tenths.iter().sum::<f64>() / 7.0, 0.1);
        assert_eq!(pearson_r(&[0.3, 0.1, 0.9, 0.2, 0.5, 0.6, 0.4], &tenths).unwrap().value, 0.0);
    }

    #[test]
    fn topk_examples() {
        let cands: Vec<Vec<f64>> = (0..10).map(|i| (0..10).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let truth: Vec<usize> = (0..10).collect();
        let r = topk_accuracy(&cands, &cands, &truth, 5).unwrap();
        assert_eq!(r, TopK { accuracy: 1.0, median_rank: 1.0 });
        let junk: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64).sin(); 10]).collect();
        assert_eq!(topk_accuracy(&junk, &cands, &truth, 10).unwrap().accuracy, 1.0);
        let mut p = cands[7].clone();
        p[3] += 0.05;
        p[2] -= 0.05;
        assert_eq!(retrieval_rank(&p, &cands, 7), 1);
        // identical similarities: lower index wins
        assert_eq!(retrieval_rank(&[0.0; 10], &cands, 0), 1);
        assert_eq!(retrieval_rank(&[0.0; 10], &cands, 4), 5);
    }

    #[test]
    fn topk_is_scale_invariant() {
        let cands = vec![vec![1.0, 0.2], vec![0.3, 1.0], vec![-1.0, 0.5]];
        let preds = vec![vec![0.9, 0.4], vec![-0.2, 0.8]];
        let scaled: Vec<Vec<f64>> = preds.iter().map(|p| p.iter().map(|v| v * 7.5).collect()).collect();
        let a = topk_accuracy(&preds, &cands, &[0, 2], 1).unwrap();
        let b = topk_accuracy(&scaled, &cands, &[0, 2], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeats_are_averaged_per_subject_and_concept() {
        let preds = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let targets = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let subjects = vec!["s1".to_string(), "s1".to_string(), "s1".to_string()];
        let concepts = vec![Some("a".to_string()), Some("a".to_string()), Some("b".to_string())];
        let q = aggregate_retrieval(&preds, &targets, &subjects, &concepts);
        assert_eq!(q.candidates, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(q.preds, vec![vec![0.5, 0.5], vec![1.0, 1.0]]);
        assert_eq!(q.truth, vec![0, 1]);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_score(0.5, 0.5, 1.0).unwrap(), 0.0);
        assert_eq!(normalize_score(1.0, 0.5, 1.0).unwrap(), 1.0);
        assert_eq!(normalize_score(0.75, 0.5, 1.0).unwrap(), 0.5);
        assert!(normalize_score(0.2, 0.5, 1.0).unwrap() < 0.0);
        assert!(normalize_score(1.0, 1.0, 1.0).is_err());
        assert_eq!(normalize_max(0.8, 0.4, 0.8).unwrap(), 1.0);
        assert!((normalize_max(0.6, 0.4, 0.8).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_affine_equivariant() {
        let (s, d, p) = (0.63, 0.41, 1.0);
        let base = normalize_score(s, d, p).unwrap();
        for (a, b) in [(2.0, 1.0), (0.5, -3.0), (10.0, 0.25)] {
            let t = normalize_score(a * s + b, a * d + b, a * p + b).unwrap();
            assert!((t - base).abs() < 1e-12);
        }
    }

    #[test]
    fn sem_examples() {
        assert_eq!(sem(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        assert!((sem(&[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(sem(&[3.0]).is_err());
    }

    #[test]
    fn balanced_accuracy_ignores_relabeling() {
        let t = [0, 1, 2, 2, 1, 0, 0];
        let p = [0, 2, 2, 1, 1, 0, 1];
        let perm = [2, 0, 1];
        let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
        assert_eq!(balanced_accuracy(&t, &p).unwrap(), balanced_accuracy(&tp, &pp).unwrap());
    }

    #[test]
    fn perfect_predictions_score_perfect() {
        let cases: Vec<(ObjectiveKind, Vec<Target>, usize, MetricName)> = vec![
            (ObjectiveKind::MulticlassClassification, vec![Target::ClassIndex(0), Target::ClassIndex(2), Target::ClassIndex(1)], 3, MetricName::BalancedAccuracy),
            (ObjectiveKind::MultilabelClassification, vec![Target::LabelVector(vec![true, false]), Target::LabelVector(vec![false, true])], 2, MetricName::MacroF1),
            (ObjectiveKind::Regression, vec![Target::Scalar(1.0), Target::Scalar(-2.0), Target::Scalar(0.5)], 1, MetricName::PearsonR),
        ];
        for (objective, targets, n_outputs, metric) in cases {
            let preds = perfect_predictions(&targets, objective, n_outputs);
            let subjects = vec!["s".to_string(); targets.len()];
            let concepts = vec![None; targets.len()];
            let input = EvalInput { objective, n_outputs, targets: &targets, predictions: &preds, subjects: &subjects, concepts: &concepts };
            let v = evaluate(&input, &[metric]).unwrap();
            assert_eq!(v[0].value, metric.perfect_value(), "{metric}");
        }
    }
}
