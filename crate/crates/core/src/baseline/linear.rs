//! Standard scaling, L2 logistic regression and ridge with grid-searched regularization.

use argmin::core::{CostFunction, Executor, Gradient, State, TerminationReason, TerminationStatus};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::BaselineError;

pub const C_GRID: [f64; 5] = [1e-2, 1e-1, 1.0, 1e1, 1e2];
pub const ALPHA_GRID: [f64; 5] = [1e-3, 0.031_622_776_601_683_79, 1.0, 31.622_776_601_683_79, 1e3];
pub const CV_FOLDS: usize = 5;
pub const GRAD_TOL: f64 = 1e-6;
const LBFGS_MEMORY: usize = 10;
const LBFGS_MAX_ITER: u64 = 2000;

/// Per-feature mean and standard deviation (population), zero-variance features left unscaled.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(x: &DMatrix<f64>) -> StandardScaler {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        StandardScaler { mean, scale }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }
}

fn check_finite(x: &DMatrix<f64>) -> Result<(), BaselineError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(BaselineError::NonFinite("features".into()))
    }
}

/// Objective `(1/n) Σ CE + ‖W‖² / (2 C n)`; the intercept is not penalized.
struct Softmax<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [usize],
    k: usize,
    c: f64,
}

impl Softmax<'_> {
    /// Parameters are laid out as `k` blocks of `d + 1` (weights then intercept).
    fn eval(&self, p: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        let (n, d, k) = (self.x.nrows(), self.x.ncols(), self.k);
        let inv_n = 1.0 / n as f64;
        let w = DMatrix::from_fn(d, k, |j, c| p[c * (d + 1) + j]);
        let mut z = self.x * &w;
        for (c, mut col) in z.column_iter_mut().enumerate() {
            col.add_scalar_mut(p[c * (d + 1) + d]);
        }
        let mut loss = 0.0;
        for i in 0..n {
            let m = (0..k).map(|c| z[(i, c)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..k).map(|c| (z[(i, c)] - m).exp()).sum::<f64>().ln();
            loss += (lse - z[(i, self.y[i])]) * inv_n;
            // Reuse `z` for the residual softmax − onehot, scaled by 1/n.
            for c in 0..k {
                let t = if c == self.y[i] { 1.0 } else { 0.0 };
                z[(i, c)] = ((z[(i, c)] - lse).exp() - t) * inv_n;
            }
        }
        let lam = inv_n / self.c;
        loss += 0.5 * lam * w.norm_squared();
        if let Some(g) = grad {
            let gw = self.x.transpose() * &z + &w * lam;
            g.clear();
            g.resize(p.len(), 0.0);
            for c in 0..k {
                for j in 0..d {
                    g[c * (d + 1) + j] = gw[(j, c)];
                }
                g[c * (d + 1) + d] = z.column(c).sum();
            }
        }
        loss
    }
}

impl CostFunction for Softmax<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.eval(p, None))
    }
}

impl Gradient for Softmax<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, p: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        let mut g = Vec::new();
        self.eval(p, Some(&mut g));
        Ok(g)
    }
}

/// Multinomial logistic regression on already-scaled features.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    pub n_classes: usize,
    /// `n_classes × (d + 1)`, intercept last.
    pub coef: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: u64,
}

impl Logistic {
    pub fn fit(x: &DMatrix<f64>, y: &[usize], n_classes: usize, c: f64) -> Result<Logistic, BaselineError> {
        check_finite(x)?;
        let distinct = y.iter().collect::<std::collections::BTreeSet<_>>().len();
        if distinct < 2 {
            return Err(BaselineError::SingleClass);
        }
        if y.iter().any(|&v| v >= n_classes) {
            return Err(BaselineError::Empty(format!("label out of range for {n_classes} classes")));
        }
        let problem = Softmax { x, y, k: n_classes, c };
        let init = vec![0.0; n_classes * (x.ncols() + 1)];
        let solver = LBFGS::new(MoreThuenteLineSearch::new(), LBFGS_MEMORY)
            .with_tolerance_grad(GRAD_TOL)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .map_err(|e| BaselineError::Solver(e.to_string()))?;
        let res = Executor::new(problem, solver)
            .configure(|st| st.param(init.clone()).max_iters(LBFGS_MAX_ITER))
            .run()
            .map_err(|e| BaselineError::Solver(e.to_string()))?;
        let state = res.state();
        let coef = state.get_best_param().cloned().unwrap_or(init);
        let problem = Softmax { x, y, k: n_classes, c };
        let mut g = Vec::new();
        problem.eval(&coef, Some(&mut g));
        let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if grad_norm > GRAD_TOL {
            let why = match state.get_termination_status() {
                TerminationStatus::Terminated(TerminationReason::MaxItersReached) => "iteration cap",
                _ => "line search stall",
            };
            log::debug!("logistic C={c}: gradient norm {grad_norm:.2e} after {} iterations ({why})", state.get_iter());
        }
        Ok(Logistic { n_classes, coef, grad_norm, iterations: state.get_iter() })
    }

    pub fn decision(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = x.ncols();
        DMatrix::from_fn(x.nrows(), self.n_classes, |i, c| {
            let w = &self.coef[c * (d + 1)..(c + 1) * (d + 1)];
            w[d] + x.row(i).iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>()
        })
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        let z = self.decision(x);
        z.row_iter()
            .map(|r| {
                let m = r.max();
                let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        self.predict_proba(x).iter().map(|p| argmax(p)).collect()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Ridge with an unpenalized intercept, multi-output.
#[derive(Clone, Debug, PartialEq)]
pub struct Ridge {
    /// `d × m`
    pub coef: DMatrix<f64>,
    pub intercept: Vec<f64>,
}

impl Ridge {
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<Ridge, BaselineError> {
        check_finite(x)?;
        let (n, d) = (x.nrows(), x.ncols());
        if n < 2 {
            return Err(BaselineError::Empty("ridge needs at least 2 samples".into()));
        }
        let xm: Vec<f64> = x.column_iter().map(|c| c.mean()).collect();
        let ym: Vec<f64> = y.column_iter().map(|c| c.mean()).collect();
        let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - xm[j]);
        let yc = DMatrix::from_fn(n, y.ncols(), |i, j| y[(i, j)] - ym[j]);
        let coef = if d <= n {
            let a = xc.transpose() * &xc + DMatrix::identity(d, d) * alpha;
            solve_spd(a, xc.transpose() * &yc)?
        } else {
            let a = &xc * xc.transpose() + DMatrix::identity(n, n) * alpha;
            xc.transpose() * solve_spd(a, yc)?
        };
        let intercept = (0..y.ncols())
            .map(|m| ym[m] - xm.iter().enumerate().map(|(j, v)| v * coef[(j, m)]).sum::<f64>())
            .collect();
        Ok(Ridge { coef, intercept })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * &self.coef;
        for mut row in out.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.intercept) {
                *v += b;
            }
        }
        out
    }
}

fn solve_spd(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>, BaselineError> {
    match a.clone().cholesky() {
        Some(ch) => Ok(ch.solve(&b)),
        None => a.lu().solve(&b).ok_or_else(|| BaselineError::Solver("singular ridge system".into())),
    }
}

/// Fold index per sample; stratified round-robin after a seeded shuffle within each group.
pub fn fold_assignment(groups: &[usize], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, &g) in groups.iter().enumerate() {
        by.entry(g).or_default().push(i);
    }
    let mut folds = vec![0; groups.len()];
    let mut next = 0;
    for members in by.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = next % k;
            next += 1;
        }
    }
    folds
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_rows(idx)
}

fn balanced_accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    crate::metrics::balanced_accuracy(truth, pred).unwrap_or(0.0)
}

/// Scaler plus logistic head with `C` chosen by cross-validation.
#[derive(Clone, Debug)]
pub struct LogisticCv {
    pub scaler: StandardScaler,
    pub model: Logistic,
    pub c: f64,
    pub cv_scores: Vec<f64>,
}

impl LogisticCv {
    pub fn fit(x: &DMatrix<f64>, y: &[usize], n_classes: usize, grid: &[f64], seed: u64) -> Result<LogisticCv, BaselineError> {
        check_finite(x)?;
        let smallest = {
            let mut counts = vec![0usize; n_classes];
            for &v in y {
                counts[v.min(n_classes - 1)] += 1;
            }
            counts.into_iter().filter(|&c| c > 0).min().unwrap_or(0)
        };
        let k = CV_FOLDS.min(smallest).max(2);
        let folds = fold_assignment(y, k, seed);
        let cv_scores = grid
            .par_iter()
            .map(|&c| -> Result<f64, BaselineError> {
                let mut score = 0.0;
                for f in 0..k {
                    let tr: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
                    let te: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
                    let ytr: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
                    let sc = StandardScaler::fit(&rows(x, &tr));
                    let pred = match Logistic::fit(&sc.transform(&rows(x, &tr)), &ytr, n_classes, c) {
                        Ok(m) => m.predict(&sc.transform(&rows(x, &te))),
                        Err(BaselineError::SingleClass) => vec![ytr[0]; te.len()],
                        Err(e) => return Err(e),
                    };
                    let yte: Vec<usize> = te.iter().map(|&i| y[i]).collect();
                    score += balanced_accuracy(&yte, &pred) / k as f64;
                }
                Ok(score)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let best = best_index(&cv_scores);
        let scaler = StandardScaler::fit(x);
        let model = Logistic::fit(&scaler.transform(x), y, n_classes, grid[best])?;
        Ok(LogisticCv { scaler, model, c: grid[best], cv_scores })
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<Vec<f64>> {
        self.model.predict_proba(&self.scaler.transform(x))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        self.model.predict(&self.scaler.transform(x))
    }
}

/// First index of the maximum (earlier grid entries win ties).
fn best_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] + 1e-12 {
            best = i;
        }
    }
    best
}

/// Scaler plus ridge head with `α` chosen by cross-validated mean squared error.
#[derive(Clone, Debug)]
pub struct RidgeCv {
    pub scaler: StandardScaler,
    pub model: Ridge,
    pub alpha: f64,
    pub cv_scores: Vec<f64>,
}

impl RidgeCv {
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, grid: &[f64], seed: u64) -> Result<RidgeCv, BaselineError> {
        check_finite(x)?;
        let n = x.nrows();
        let k = CV_FOLDS.min(n).max(2);
        let folds = fold_assignment(&vec![0; n], k, seed);
        let cv_scores = grid
            .par_iter()
            .map(|&alpha| -> Result<f64, BaselineError> {
                let mut sse = 0.0;
                for f in 0..k {
                    let tr: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                    let te: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
                    let sc = StandardScaler::fit(&rows(x, &tr));
                    let m = Ridge::fit(&sc.transform(&rows(x, &tr)), &rows(y, &tr), alpha)?;
                    let err = m.predict(&sc.transform(&rows(x, &te))) - rows(y, &te);
                    sse += err.norm_squared();
                }
                Ok(-sse / (n * y.ncols()) as f64)
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let best = best_index(&cv_scores);
        let scaler = StandardScaler::fit(x);
        let model = Ridge::fit(&scaler.transform(x), y, grid[best])?;
        Ok(RidgeCv { scaler, model, alpha: grid[best], cv_scores })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.model.predict(&self.scaler.transform(x))
    }
}

pub fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j])
}

pub fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

pub fn dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
