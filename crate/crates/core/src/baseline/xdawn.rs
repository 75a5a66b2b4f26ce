//! xDAWN spatial filters and augmented covariances for evoked responses.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView3;

use super::spd::{covariance_f64, shrunk_covariance, window_matrix};
use super::BaselineError;

pub const N_FILTERS: usize = 4;

#[derive(Clone, Debug)]
pub struct Xdawn {
    /// `C × (K·nf)`, class blocks of `nf` columns.
    pub filters: DMatrix<f64>,
    /// `(K·nf) × T`, filtered class prototypes.
    pub prototypes: DMatrix<f64>,
    pub n_classes: usize,
    pub n_filters: usize,
}

/// Leading generalized eigenvectors of `a v = λ b v`, `b` SPD, largest first.
pub fn generalized_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>), BaselineError> {
    let l = b.clone().cholesky().ok_or_else(|| BaselineError::Solver("total covariance is not SPD".into()))?.l();
    let li = l.try_inverse().ok_or_else(|| BaselineError::Solver("singular Cholesky factor".into()))?;
    let m = &li * a * li.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let e = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]).then(i.cmp(&j)));
    let vecs = li.transpose() * &e.eigenvectors;
    let mut out = DMatrix::zeros(vecs.nrows(), order.len());
    for (k, &i) in order.iter().enumerate() {
        let mut v = vecs.column(i).into_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let big = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if big < 0.0 {
            v = -v;
        }
        out.set_column(k, &v);
    }
    Ok((order.iter().map(|&i| e.eigenvalues[i]).collect(), out))
}

impl Xdawn {
    pub fn fit(epochs: ArrayView3<'_, f32>, labels: &[usize], n_classes: usize, n_filters: usize) -> Result<Xdawn, BaselineError> {
        let (n, c, t) = epochs.dim();
        let mut counts = vec![0usize; n_classes];
        for &y in labels {
            counts[y] += 1;
        }
        if counts.iter().filter(|&&k| k >= 2).count() < 2 {
            return Err(BaselineError::SingleClass);
        }
        let nf = n_filters.min(c);
        let mut all = DMatrix::zeros(c, n * t);
        for e in 0..n {
            let w = window_matrix(epochs.index_axis(ndarray::Axis(0), e));
            all.columns_mut(e * t, t).copy_from(&w);
        }
        let total = shrunk_covariance(&all);
        let mut filters = DMatrix::zeros(c, n_classes * nf);
        let mut prototypes = DMatrix::zeros(n_classes * nf, t);
        for k in 0..n_classes {
            let mut proto = DMatrix::zeros(c, t);
            if counts[k] > 0 {
                for (e, &y) in labels.iter().enumerate() {
                    if y == k {
                        proto += window_matrix(epochs.index_axis(ndarray::Axis(0), e));
                    }
                }
                proto /= counts[k] as f64;
            }
            let (_, vecs) = generalized_eig(&covariance_f64(&proto), &total)?;
            let v = vecs.columns(0, nf).into_owned();
            prototypes.rows_mut(k * nf, nf).copy_from(&(v.transpose() * &proto));
            filters.columns_mut(k * nf, nf).copy_from(&v);
        }
        Ok(Xdawn { filters, prototypes, n_classes, n_filters: nf })
    }

    /// Prototypes stacked above the filtered epoch.
    pub fn augmented(&self, window: &DMatrix<f64>) -> DMatrix<f64> {
        let filtered = self.filters.transpose() * window;
        let (p, t) = (self.prototypes.nrows(), window.ncols());
        let mut out = DMatrix::zeros(2 * p, t);
        out.rows_mut(0, p).copy_from(&self.prototypes);
        out.rows_mut(p, p).copy_from(&filtered);
        out
    }

    pub fn covariance(&self, window: &DMatrix<f64>) -> DMatrix<f64> {
        shrunk_covariance(&self.augmented(window))
    }
}
