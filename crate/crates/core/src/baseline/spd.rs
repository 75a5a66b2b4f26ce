//! Covariances and affine-invariant geometry on SPD matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::ArrayView2;

use super::BaselineError;

pub const GAMMA_MIN: f64 = 1e-3;
pub const KARCHER_TOL: f64 = 1e-7;
pub const KARCHER_MAX_ITER: usize = 50;

/// Channel-centered sample covariance `X Xᵀ / (T - 1)`.
pub fn covariance(window: ArrayView2<'_, f32>) -> DMatrix<f64> {
    covariance_f64(&window_matrix(window))
}

pub fn covariance_f64(x: &DMatrix<f64>) -> DMatrix<f64> {
    let xc = centered(x);
    let mut s = &xc * xc.transpose() / (x.ncols().max(2) - 1) as f64;
    symmetrize(&mut s);
    s
}

/// Rows minus their means.
pub fn centered(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Ledoit–Wolf shrinkage intensity from centered data (`C × T`, samples in columns).
pub fn ledoit_wolf_gamma(xc: &DMatrix<f64>) -> f64 {
    let (p, n) = (xc.nrows() as f64, xc.ncols() as f64);
    if n < 1.0 {
        return GAMMA_MIN;
    }
    let emp = xc * xc.transpose() / n;
    let mu = emp.trace() / p;
    let x2 = xc.map(|v| v * v);
    let beta_sum = (&x2 * x2.transpose()).sum();
    let delta_sum = emp.norm_squared();
    let beta = (beta_sum / n - delta_sum) / (p * n);
    let delta = (delta_sum - 2.0 * mu * emp.trace() + p * mu * mu) / p;
    if delta <= 0.0 {
        return GAMMA_MIN;
    }
    (beta.min(delta) / delta).max(GAMMA_MIN)
}

/// `(1-γ)·S + γ·(tr S / C)·I`, with a trace floor so the result is SPD.
pub fn shrink(s: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let c = s.nrows();
    let gamma = gamma.clamp(GAMMA_MIN, 1.0);
    let mu = (s.trace() / c as f64).max(f64::EPSILON);
    let mut out = s * (1.0 - gamma) + DMatrix::identity(c, c) * (gamma * mu);
    symmetrize(&mut out);
    out
}

/// Sample covariance shrunk with the Ledoit–Wolf intensity of the same data.
pub fn shrunk_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    shrink(&covariance_f64(x), ledoit_wolf_gamma(&centered(x)))
}

pub fn window_matrix(window: ArrayView2<'_, f32>) -> DMatrix<f64> {
    let (c, t) = window.dim();
    DMatrix::from_fn(c, t, |i, j| f64::from(window[[i, j]]))
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn eig_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DVector::from_iterator(e.eigenvalues.len(), e.eigenvalues.iter().map(|&v| f(v)));
    let mut out = &e.eigenvectors * DMatrix::from_diagonal(&d) * e.eigenvectors.transpose();
    symmetrize(&mut out);
    out
}

pub fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    eig_apply(m, f64::sqrt)
}

pub fn invsqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    eig_apply(m, |v| 1.0 / v.sqrt())
}

pub fn logm(m: &DMatrix<f64>) -> DMatrix<f64> {
    eig_apply(m, f64::ln)
}

pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    eig_apply(m, f64::exp)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Affine-invariant distance `‖logm(A^{-1/2} B A^{-1/2})‖_F`.
pub fn distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let w = invsqrtm(a);
    logm(&(&w * b * &w)).norm()
}

#[derive(Clone, Debug)]
pub struct KarcherResult {
    pub mean: DMatrix<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Fixed-point Karcher mean (unit step) starting from the arithmetic mean.
pub fn karcher_mean(mats: &[DMatrix<f64>], tol: f64, max_iter: usize) -> KarcherResult {
    let n = mats.len().max(1) as f64;
    let c = mats.first().map_or(0, DMatrix::nrows);
    let mut m = mats.iter().fold(DMatrix::zeros(c, c), |acc, p| acc + p) / n;
    let mut grad_norm = f64::INFINITY;
    for it in 0..=max_iter {
        let half = sqrtm(&m);
        let ihalf = invsqrtm(&m);
        let g = mats.iter().fold(DMatrix::zeros(c, c), |acc, p| acc + logm(&(&ihalf * p * &ihalf))) / n;
        grad_norm = g.norm();
        if grad_norm <= tol {
            return KarcherResult { mean: m, iterations: it, grad_norm, converged: true };
        }
        if it == max_iter {
            break;
        }
        m = &half * expm(&g) * &half;
        symmetrize(&mut m);
    }
    KarcherResult { mean: m, iterations: max_iter, grad_norm, converged: false }
}

pub fn riemannian_mean(mats: &[DMatrix<f64>], tol: f64, max_iter: usize) -> Result<DMatrix<f64>, BaselineError> {
    if mats.is_empty() {
        return Err(BaselineError::Empty("riemannian mean of no matrices".into()));
    }
    let r = karcher_mean(mats, tol, max_iter);
    if r.converged {
        Ok(r.mean)
    } else {
        Err(BaselineError::NotConverged { what: "karcher mean", iterations: r.iterations, residual: r.grad_norm })
    }
}

/// Upper triangle of `logm(ref^{-1/2} P ref^{-1/2})`, off-diagonals scaled by √2.
pub fn tangent_project(p: &DMatrix<f64>, reference: &DMatrix<f64>) -> Vec<f64> {
    tangent_project_with(p, &invsqrtm(reference))
}

/// Same as [`tangent_project`] with a precomputed `ref^{-1/2}`.
pub fn tangent_project_with(p: &DMatrix<f64>, ref_isqrt: &DMatrix<f64>) -> Vec<f64> {
    upper_triangle(&logm(&(ref_isqrt * p * ref_isqrt)), std::f64::consts::SQRT_2)
}

pub fn upper_triangle(m: &DMatrix<f64>, off_scale: f64) -> Vec<f64> {
    let c = m.nrows();
    let mut out = Vec::with_capacity(c * (c + 1) / 2);
    for i in 0..c {
        out.push(m[(i, i)]);
        for j in i + 1..c {
            out.push(off_scale * m[(i, j)]);
        }
    }
    out
}
