//! Training recipe for the internal linear decoder.

pub mod adamw;
pub mod loss;
pub mod schedule;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ClassWeighting, LossName, TaskSpec, TrainerSpec};
use crate::domain::{ExampleSet, ObjectiveKind, Prediction, Target};
use crate::metrics::{evaluate, EvalInput, MetricName};
use adamw::{clip_grad_norm, AdamW};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite loss {loss} at epoch {epoch}, step {step} (lr {lr:.3e}, parameter norm {param_norm:.3e})")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64, lr: f64, param_norm: f64 },
    #[error("zero-norm {0}")]
    ZeroNorm(String),
    #[error("{0}")]
    Data(String),
    #[error("metric: {0}")]
    Metric(String),
}

/// How a window becomes the decoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InputMap {
    /// All `C·T` samples.
    Flatten,
    /// Per-channel means over `bins` equal time segments.
    Pooled { bins: usize },
}

impl InputMap {
    pub fn dim(self, n_channels: usize, n_times: usize) -> usize {
        match self {
            InputMap::Flatten => n_channels * n_times,
            InputMap::Pooled { bins } => n_channels * bins.min(n_times).max(1),
        }
    }

    pub fn apply(self, es: &ExampleSet) -> Array2<f64> {
        let (n, c, t) = es.windows.dim();
        match self {
            InputMap::Flatten => {
                Array2::from_shape_fn((n, c * t), |(i, j)| f64::from(es.windows[[i, j / t, j % t]]))
            }
            InputMap::Pooled { bins } => {
                let bins = bins.min(t).max(1);
                let mut out = Array2::zeros((n, c * bins));
                for i in 0..n {
                    for ch in 0..c {
                        for b in 0..bins {
                            let (lo, hi) = (b * t / bins, (b + 1) * t / bins);
                            let seg = es.windows.slice(s![i, ch, lo..hi]);
                            out[[i, ch * bins + b]] = seg.iter().map(|&v| f64::from(v)).sum::<f64>() / (hi - lo) as f64;
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearDecoder {
    /// `D_out × D_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearDecoder {
    /// Uniform(−1/√D_in, 1/√D_in) for weights and bias.
    pub fn init(d_in: usize, d_out: usize, seed: u64) -> LinearDecoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_in.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((d_out, d_in), || rng.gen_range(-bound..bound));
        let bias = Array1::from_shape_simple_fn(d_out, || rng.gen_range(-bound..bound));
        LinearDecoder { weight, bias }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn params(&self) -> Vec<f64> {
        self.weight.iter().chain(self.bias.iter()).copied().collect()
    }

    fn set_params(&mut self, p: &[f64]) {
        let nw = self.weight.len();
        self.weight.iter_mut().zip(&p[..nw]).for_each(|(w, v)| *w = *v);
        self.bias.iter_mut().zip(&p[nw..]).for_each(|(b, v)| *b = *v);
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Turns raw decoder outputs into predictions for `objective`.
pub fn outputs_to_predictions(out: ArrayView2<'_, f64>, objective: ObjectiveKind) -> Vec<Prediction> {
    out.rows()
        .into_iter()
        .map(|r| match objective {
            ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
                let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                Prediction::ClassProbs(e.into_iter().map(|v| v / s).collect())
            }
            ObjectiveKind::MultilabelClassification => {
                Prediction::LabelProbs(r.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect())
            }
            _ => Prediction::from_values(objective, r.to_vec()),
        })
        .collect()
}

pub fn predict(decoder: &LinearDecoder, map: InputMap, es: &ExampleSet, objective: ObjectiveKind) -> Vec<Prediction> {
    outputs_to_predictions(decoder.forward(map.apply(es).view()).view(), objective)
}

/// `n / (K · n_k)` per class; absent classes get 0.
pub fn balanced_class_weights(targets: &[Target], n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for t in targets {
        if let Target::ClassIndex(k) = t {
            if *k < n_classes {
                counts[*k] += 1;
            }
        }
    }
    let n = targets.len() as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { n / (n_classes as f64 * c as f64) }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub lr: f64,
}

pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub decoder: LinearDecoder,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub monitored: MetricName,
    pub stopped_early: bool,
}

/// Loss value and gradient with respect to the decoder outputs.
fn batch_loss(
    loss: LossName,
    out: &Array2<f64>,
    targets: &[Target],
    idx: &[usize],
    n_outputs: usize,
    weights: Option<&[f64]>,
) -> Result<(f64, Array2<f64>), OptimError> {
    let dense = || Array2::from_shape_fn((idx.len(), n_outputs), |(i, j)| targets[idx[i]].to_vector(n_outputs)[j]);
    Ok(match loss {
        LossName::CrossEntropyLoss => {
            let y: Vec<usize> = idx
                .iter()
                .map(|&i| match &targets[i] {
                    Target::ClassIndex(k) => Ok(*k),
                    other => Err(OptimError::Data(format!("cross-entropy needs class targets, got {}", other.variant_name()))),
                })
                .collect::<Result<_, _>>()?;
            loss::cross_entropy(out.view(), &y, weights)
        }
        LossName::BCEWithLogitsLoss => loss::bce_with_logits(out.view(), dense().view()),
        LossName::MSELoss => loss::mse(out.view(), dense().view()),
        LossName::ClipLoss => loss::clip(out.view(), dense().view())?,
    })
}

fn monitored_value(
    decoder: &LinearDecoder,
    x: ArrayView2<'_, f64>,
    valid: &ExampleSet,
    objective: ObjectiveKind,
    n_outputs: usize,
    metric: MetricName,
) -> Result<f64, OptimError> {
    let preds = outputs_to_predictions(decoder.forward(x).view(), objective);
    let input = EvalInput {
        objective,
        n_outputs,
        targets: &valid.targets,
        predictions: &preds,
        subjects: &valid.subject_ids,
        concepts: &valid.concept_ids,
    };
    let v = evaluate(&input, &[metric]).map_err(|e| OptimError::Metric(e.to_string()))?;
    Ok(v[0].value)
}

/// Trains on `train`, early-stopping on the first declared metric over `valid`.
pub fn train_linear_decoder(
    spec: &TaskSpec,
    n_outputs: usize,
    train: &ExampleSet,
    valid: &ExampleSet,
    trainer: &TrainerSpec,
    map: InputMap,
    seed: u64,
) -> Result<TrainOutcome, OptimError> {
    if train.is_empty() || valid.is_empty() {
        return Err(OptimError::Data("training needs non-empty train and valid splits".into()));
    }
    let monitored = *spec.metrics.first().ok_or_else(|| OptimError::Data("task declares no metric".into()))?;
    let higher = monitored.higher_is_better();
    let xtr = map.apply(train);
    let xva = map.apply(valid);
    let mut decoder = LinearDecoder::init(xtr.ncols(), n_outputs, seed);
    let weights = match (spec.loss, spec.class_weighting) {
        (LossName::CrossEntropyLoss, ClassWeighting::Balanced) => Some(balanced_class_weights(&train.targets, n_outputs)),
        _ => None,
    };
    let n = train.len();
    let bs = trainer.batch_size.max(1);
    let steps_per_epoch = n.div_ceil(bs);
    let total = steps_per_epoch * trainer.max_epochs;
    let mut opt = AdamW::new(decoder.n_params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ba7_c4e5);
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = decoder.params();
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut history = Vec::new();
    let mut wait = 0;
    let mut step = 0;
    let mut stopped_early = false;
    for epoch in 0..trainer.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for chunk in order.chunks(bs) {
            step += 1;
            let xb = xtr.select(Axis(0), chunk);
            let out = decoder.forward(xb.view());
            let (l, gout) =
                batch_loss(spec.loss, &out, &train.targets, chunk, n_outputs, weights.as_deref())?;
            lr = schedule::cosine_warmup_lr(step, total, trainer.lr, trainer.warmup_fraction);
            if !l.is_finite() {
                let param_norm = params.iter().map(|p| p * p).sum::<f64>().sqrt();
                return Err(OptimError::NonFiniteLoss { epoch, step, loss: l, lr, param_norm });
            }
            epoch_loss += l * chunk.len() as f64 / n as f64;
            let gw = gout.t().dot(&xb);
            let gb = gout.sum_axis(Axis(0));
            let mut grads: Vec<f64> = gw.iter().chain(gb.iter()).copied().collect();
            if let Some(c) = trainer.grad_clip {
                clip_grad_norm(&mut grads, c);
            }
            opt.step(&mut params, &grads, lr, trainer.weight_decay);
            decoder.set_params(&params);
        }
        let v = monitored_value(&decoder, xva.view(), valid, spec.objective, n_outputs, monitored)?;
        history.push(EpochRecord { epoch, train_loss: epoch_loss, valid_metric: v, lr });
        let improved = v.is_finite()
            && match &best {
                None => true,
                Some((b, _, _)) => (higher && v > *b) || (!higher && v < *b),
            };
        if improved {
            best = Some((v, params.clone(), epoch));
            wait = 0;
        } else {
            wait += 1;
            if wait >= trainer.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_params) = match best {
        Some((_, p, e)) => (e, p),
        None => (history.len().saturating_sub(1), params),
    };
    decoder.set_params(&best_params);
    Ok(TrainOutcome { decoder, history, best_epoch, monitored, stopped_early })
}
