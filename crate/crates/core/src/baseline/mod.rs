//! Reference models: the dummy baseline and the handcrafted covariance pipelines.

pub mod cospectra;
pub mod linear;
pub mod spd;
pub mod xdawn;

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{TaskCategory, TaskSpec};
use crate::domain::{ExampleSet, ObjectiveKind, Prediction, Target};
use linear::{to_matrix, LogisticCv, RidgeCv, ALPHA_GRID, C_GRID};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("training targets contain a single class")]
    SingleClass,
    #[error("{0}")]
    Empty(String),
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("{what} did not converge in {iterations} iterations (residual {residual:.3e})")]
    NotConverged { what: &'static str, iterations: usize, residual: f64 },
    #[error("solver: {0}")]
    Solver(String),
    #[error("no handcrafted pipeline for {0}")]
    NoRoute(String),
    #[error("target {found} does not fit objective {objective}")]
    TargetKind { found: &'static str, objective: &'static str },
}

/// Constant (or frequency-sampled) predictions from training statistics.
pub fn dummy_fit_predict(
    fit_targets: &[Target],
    objective: ObjectiveKind,
    n_outputs: usize,
    n_test: usize,
    seed: u64,
) -> Result<Vec<Prediction>, BaselineError> {
    if fit_targets.is_empty() {
        return Err(BaselineError::Empty("dummy baseline needs training targets".into()));
    }
    let mismatch = |t: &Target| BaselineError::TargetKind { found: t.variant_name(), objective: objective.as_str() };
    let n = fit_targets.len() as f64;
    Ok(match objective {
        ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
            let mut counts = vec![0usize; n_outputs];
            for t in fit_targets {
                match t {
                    Target::ClassIndex(k) if *k < n_outputs => counts[*k] += 1,
                    other => return Err(mismatch(other)),
                }
            }
            let mut best = 0;
            for (k, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = k;
                }
            }
            let mut p = vec![0.0; n_outputs];
            p[best] = 1.0;
            vec![Prediction::ClassProbs(p); n_test]
        }
        ObjectiveKind::MultilabelClassification => {
            let mut freq = vec![0.0; n_outputs];
            for t in fit_targets {
                match t {
                    Target::LabelVector(v) if v.len() == n_outputs => {
                        for (f, &b) in freq.iter_mut().zip(v) {
                            *f += f64::from(u8::from(b)) / n;
                        }
                    }
                    other => return Err(mismatch(other)),
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n_test)
                .map(|_| {
                    Prediction::LabelProbs(freq.iter().map(|&f| f64::from(u8::from(rng.gen::<f64>() < f))).collect())
                })
                .collect()
        }
        ObjectiveKind::Regression | ObjectiveKind::Retrieval => {
            let mut mean = vec![0.0; n_outputs];
            for t in fit_targets {
                let v = match (objective, t) {
                    (ObjectiveKind::Regression, Target::Scalar(_)) | (ObjectiveKind::Retrieval, Target::Embedding(_)) => {
                        t.to_vector(n_outputs)
                    }
                    (_, other) => return Err(mismatch(other)),
                };
                if v.len() != n_outputs {
                    return Err(mismatch(t));
                }
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x / n;
                }
            }
            vec![Prediction::from_values(objective, mean); n_test]
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    XdawnTsLR,
    CovTsLR,
    CoSpectraLogLR,
    CovTsRidge,
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::XdawnTsLR => "XdawnTsLR",
            Pipeline::CovTsLR => "CovTsLR",
            Pipeline::CoSpectraLogLR => "CoSpectraLogLR",
            Pipeline::CovTsRidge => "CovTsRidge",
        })
    }
}

pub fn route(category: TaskCategory, objective: ObjectiveKind) -> Pipeline {
    match objective {
        ObjectiveKind::Regression | ObjectiveKind::Retrieval => Pipeline::CovTsRidge,
        ObjectiveKind::MultilabelClassification => Pipeline::CovTsLR,
        _ => match category {
            TaskCategory::Evoked | TaskCategory::P300 => Pipeline::XdawnTsLR,
            TaskCategory::Ssvep => Pipeline::CoSpectraLogLR,
            _ => Pipeline::CovTsLR,
        },
    }
}

#[derive(Clone, Debug)]
pub struct HandcraftedOutput {
    pub pipeline: Pipeline,
    pub predictions: Vec<Prediction>,
    /// Selected `C` or `α` per fitted head.
    pub regularization: Vec<f64>,
}

fn class_labels(targets: &[Target]) -> Result<Vec<usize>, BaselineError> {
    targets
        .iter()
        .map(|t| match t {
            Target::ClassIndex(k) => Ok(*k),
            other => Err(BaselineError::TargetKind { found: other.variant_name(), objective: "classification" }),
        })
        .collect()
}

/// Tangent vectors of shrunk covariances at the Karcher mean of the fit covariances.
struct TangentSpace {
    ref_isqrt: DMatrix<f64>,
}

impl TangentSpace {
    fn fit(covs: &[DMatrix<f64>]) -> Result<TangentSpace, BaselineError> {
        if covs.is_empty() {
            return Err(BaselineError::Empty("no covariances".into()));
        }
        let r = spd::karcher_mean(covs, spd::KARCHER_TOL, spd::KARCHER_MAX_ITER);
        if !r.converged {
            log::warn!("karcher mean stopped at gradient norm {:.2e}; using the last iterate", r.grad_norm);
        }
        Ok(TangentSpace { ref_isqrt: spd::invsqrtm(&r.mean) })
    }

    fn transform(&self, covs: &[DMatrix<f64>]) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = covs.par_iter().map(|c| spd::tangent_project_with(c, &self.ref_isqrt)).collect();
        to_matrix(&rows)
    }
}

fn plain_covariances(es: &ExampleSet) -> Vec<DMatrix<f64>> {
    (0..es.len())
        .into_par_iter()
        .map(|i| spd::shrunk_covariance(&spd::window_matrix(es.windows.index_axis(ndarray::Axis(0), i))))
        .collect()
}

/// Features for fit and test sets under `pipeline`.
fn features(
    pipeline: Pipeline,
    spec: &TaskSpec,
    n_outputs: usize,
    fit: &ExampleSet,
    test: &ExampleSet,
) -> Result<(DMatrix<f64>, DMatrix<f64>), BaselineError> {
    match pipeline {
        Pipeline::CoSpectraLogLR => {
            let welch = cospectra::Welch::new(fit.sfreq, fit.n_times())?;
            let bins = cospectra::select_bins(&welch, &spec.handcrafted_freqs)?;
            let feats = |es: &ExampleSet| -> DMatrix<f64> {
                let rows: Vec<Vec<f64>> = (0..es.len())
                    .into_par_iter()
                    .map(|i| welch.features(es.windows.index_axis(ndarray::Axis(0), i), &bins))
                    .collect();
                to_matrix(&rows)
            };
            Ok((feats(fit), feats(test)))
        }
        Pipeline::XdawnTsLR => {
            let y = class_labels(&fit.targets)?;
            let xd = xdawn::Xdawn::fit(fit.windows.view(), &y, n_outputs, xdawn::N_FILTERS)?;
            let covs = |es: &ExampleSet| -> Vec<DMatrix<f64>> {
                (0..es.len())
                    .into_par_iter()
                    .map(|i| xd.covariance(&spd::window_matrix(es.windows.index_axis(ndarray::Axis(0), i))))
                    .collect()
            };
            let (cf, ct) = (covs(fit), covs(test));
            let ts = TangentSpace::fit(&cf)?;
            Ok((ts.transform(&cf), ts.transform(&ct)))
        }
        Pipeline::CovTsLR | Pipeline::CovTsRidge => {
            let (cf, ct) = (plain_covariances(fit), plain_covariances(test));
            let ts = TangentSpace::fit(&cf)?;
            Ok((ts.transform(&cf), ts.transform(&ct)))
        }
    }
}

/// Fits the routed pipeline on `fit` (train and valid together) and predicts `test`.
pub fn run_handcrafted(
    spec: &TaskSpec,
    n_outputs: usize,
    fit: &ExampleSet,
    test: &ExampleSet,
    seed: u64,
) -> Result<HandcraftedOutput, BaselineError> {
    let pipeline = route(spec.category, spec.objective);
    let (xf, xt) = features(pipeline, spec, n_outputs, fit, test)?;
    let mut regularization = Vec::new();
    let predictions = match spec.objective {
        ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
            let y = class_labels(&fit.targets)?;
            let m = LogisticCv::fit(&xf, &y, n_outputs, &C_GRID, seed)?;
            regularization.push(m.c);
            m.predict_proba(&xt).into_iter().map(Prediction::ClassProbs).collect()
        }
        ObjectiveKind::MultilabelClassification => {
            let mut probs = vec![vec![0.0; n_outputs]; test.len()];
            for l in 0..n_outputs {
                let y: Vec<usize> = fit
                    .targets
                    .iter()
                    .map(|t| match t {
                        Target::LabelVector(v) => usize::from(v.get(l).copied().unwrap_or(false)),
                        _ => 0,
                    })
                    .collect();
                let pos = y.iter().sum::<usize>();
                if pos == 0 || pos == y.len() {
                    let f = pos as f64 / y.len() as f64;
                    probs.iter_mut().for_each(|p| p[l] = f);
                    continue;
                }
                let m = LogisticCv::fit(&xf, &y, 2, &C_GRID, seed)?;
                regularization.push(m.c);
                for (p, q) in probs.iter_mut().zip(m.predict_proba(&xt)) {
                    p[l] = q[1];
                }
            }
            probs.into_iter().map(Prediction::LabelProbs).collect()
        }
        ObjectiveKind::Regression | ObjectiveKind::Retrieval => {
            let rows: Vec<Vec<f64>> = fit.targets.iter().map(|t| t.to_vector(n_outputs)).collect();
            let m = RidgeCv::fit(&xf, &to_matrix(&rows), &ALPHA_GRID, seed)?;
            regularization.push(m.alpha);
            m.predict(&xt)
                .row_iter()
                .map(|r| Prediction::from_values(spec.objective, r.iter().copied().collect()))
                .collect()
        }
    };
    Ok(HandcraftedOutput { pipeline, predictions, regularization })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dummy_majority_and_mean() {
        let t: Vec<Target> = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1].iter().map(|&k| Target::ClassIndex(k)).collect();
        let p = dummy_fit_predict(&t, ObjectiveKind::BinaryClassification, 2, 4, 0).unwrap();
        assert!(p.iter().all(|q| q.argmax() == Some(0)));
        let t: Vec<Target> = [4.0, 4.4, 4.2].iter().map(|&v| Target::Scalar(v)).collect();
        let p = dummy_fit_predict(&t, ObjectiveKind::Regression, 1, 2, 0).unwrap();
        match p[0] {
            Prediction::Scalar(v) => assert!((v - 4.2).abs() < 1e-12),
            _ => panic!(),
        }
    }

    #[test]
    fn dummy_multilabel_samples_training_frequencies() {
        let t: Vec<Target> = (0..10).map(|i| Target::LabelVector(vec![i < 5, i < 3])).collect();
        let p = dummy_fit_predict(&t, ObjectiveKind::MultilabelClassification, 2, 1000, 7).unwrap();
        let rate = p.iter().map(|q| q.values()[1]).sum::<f64>() / 1000.0;
        assert!((rate - 0.3).abs() < 0.05, "{rate}");
        assert_eq!(p, dummy_fit_predict(&t, ObjectiveKind::MultilabelClassification, 2, 1000, 7).unwrap());
    }

    #[test]
    fn routing_table() {
        use ObjectiveKind::*;
        assert_eq!(route(TaskCategory::Evoked, BinaryClassification), Pipeline::XdawnTsLR);
        assert_eq!(route(TaskCategory::P300, BinaryClassification), Pipeline::XdawnTsLR);
        assert_eq!(route(TaskCategory::Ssvep, MulticlassClassification), Pipeline::CoSpectraLogLR);
        assert_eq!(route(TaskCategory::Clinical, MulticlassClassification), Pipeline::CovTsLR);
        assert_eq!(route(TaskCategory::Misc, MultilabelClassification), Pipeline::CovTsLR);
        assert_eq!(route(TaskCategory::Cognitive, Retrieval), Pipeline::CovTsRidge);
        assert_eq!(route(TaskCategory::Cognitive, Regression), Pipeline::CovTsRidge);
    }
}
