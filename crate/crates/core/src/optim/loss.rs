//! Batch losses with analytic gradients with respect to the model outputs.

use ndarray::{Array2, ArrayView2};

use super::OptimError;

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `(1/B) Σ w[y]·(−log softmax(z)[y])`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, y: &[usize], weights: Option<&[f64]>) -> (f64, Array2<f64>) {
    let (b, k) = logits.dim();
    let mut grad = Array2::zeros((b, k));
    let mut loss = 0.0;
    for i in 0..b {
        let row: Vec<f64> = logits.row(i).to_vec();
        let ls = log_softmax_row(&row);
        let w = weights.map_or(1.0, |w| w[y[i]]);
        loss -= w * ls[y[i]] / b as f64;
        for c in 0..k {
            let t = if c == y[i] { 1.0 } else { 0.0 };
            grad[[i, c]] = w * (ls[c].exp() - t) / b as f64;
        }
    }
    (loss, grad)
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on logits, averaged over batch and labels.
pub fn bce_with_logits(logits: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.dim());
    for ((idx, &z), &t) in logits.indexed_iter().zip(labels.iter()) {
        loss -= (t * log_sigmoid(z) + (1.0 - t) * log_sigmoid(-z)) / n;
        grad[idx] = (sigmoid(z) - t) / n;
    }
    (loss, grad)
}

/// Mean squared error over all entries.
pub fn mse(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> (f64, Array2<f64>) {
    let n = pred.len().max(1) as f64;
    let diff = &pred - &target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff.mapv(|d| 2.0 * d / n))
}

/// Contrastive loss, prediction-to-target direction only, cosine similarity, temperature 1.
///
/// The gradient is taken with respect to the predictions; targets are constants.
pub fn clip(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>), OptimError> {
    let (b, d) = pred.dim();
    let norms = |m: ArrayView2<'_, f64>, what: &str| -> Result<Vec<f64>, OptimError> {
        m.rows()
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let n = r.dot(&r).sqrt();
                if n > 0.0 && n.is_finite() {
                    Ok(n)
                } else {
                    Err(OptimError::ZeroNorm(format!("{what} row {i}")))
                }
            })
            .collect()
    };
    let pn = norms(pred, "prediction")?;
    let tn = norms(target, "target")?;
    let u = Array2::from_shape_fn((b, d), |(i, j)| pred[[i, j]] / pn[i]);
    let v = Array2::from_shape_fn((b, d), |(i, j)| target[[i, j]] / tn[i]);
    let s = u.dot(&v.t());
    let mut loss = 0.0;
    let mut grad = Array2::zeros((b, d));
    for i in 0..b {
        let row: Vec<f64> = s.row(i).to_vec();
        let ls = log_softmax_row(&row);
        loss -= ls[i] / b as f64;
        for j in 0..b {
            let ds = (ls[j].exp() - if i == j { 1.0 } else { 0.0 }) / b as f64;
            for k in 0..d {
                grad[[i, k]] += ds * (v[[j, k]] - s[[i, j]] * u[[i, k]]) / pn[i];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type LossFn<'a> = dyn Fn(&Array2<f64>) -> (f64, Array2<f64>) + 'a;

    /// Max (relative, absolute) error between the analytic gradient and central differences.
    fn fd_errors(x: &Array2<f64>, f: &LossFn<'_>, h: f64) -> (f64, f64) {
        let (_, g) = f(x);
        let mut worst: f64 = 0.0;
        let mut worst_abs: f64 = 0.0;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            let num = (f(&xp).0 - f(&xm).0) / (2.0 * h);
            let ana = g.as_slice().unwrap()[idx];
            worst = worst.max((num - ana).abs() / ana.abs().max(num.abs()).max(1e-3));
            worst_abs = worst_abs.max((num - ana).abs());
        }
        (worst, worst_abs)
    }

    fn fd_check(x: &Array2<f64>, f: &LossFn<'_>, h: f64) -> f64 {
        fd_errors(x, f, h).0
    }

    #[test]
    fn ce_examples() {
        let (l, _) = cross_entropy(Array2::zeros((1, 4)).view(), &[2], None);
        assert!((l - 4f64.ln()).abs() < 1e-15);
        let (l, _) = cross_entropy(array![[60.0, 0.0]].view(), &[0], None);
        assert!(l < 1e-20);
        let z = array![[0.3, -0.2]];
        let (plain, _) = cross_entropy(z.view(), &[0], None);
        let (w, _) = cross_entropy(z.view(), &[0], Some(&[2.0, 1.0]));
        assert!((w - 2.0 * plain).abs() < 1e-15);
        let (eq, _) = cross_entropy(z.view(), &[0], Some(&[1.0, 1.0]));
        assert!((eq - plain).abs() < 1e-12);
    }

    #[test]
    fn bce_and_mse_examples() {
        let (l, _) = bce_with_logits(array![[0.0, 0.0]].view(), array![[1.0, 1.0]].view());
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let (l, _) = bce_with_logits(array![[40.0, -40.0]].view(), array![[1.0, 0.0]].view());
        assert!(l < 1e-15);
        let (l, _) = mse(array![[3.0]].view(), array![[1.0]].view());
        assert_eq!(l, 4.0);
        let (l, _) = mse(array![[1.5, 2.0]].view(), array![[1.5, 2.0]].view());
        assert_eq!(l, 0.0);
    }

    #[test]
    fn clip_examples() {
        let (l, _) = clip(array![[0.3, -1.0, 2.0]].view(), array![[5.0, 1.0, 0.0]].view()).unwrap();
        assert!(l.abs() <= 1e-12);
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        let (l, _) = clip(e.view(), e.view()).unwrap();
        let expect = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.31326).abs() < 1e-5);
        assert!(clip(array![[0.0, 0.0]].view(), array![[1.0, 0.0]].view()).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let b = rng.gen_range(1..=8);
            let d = rng.gen_range(2..=16);
            let x = Array2::from_shape_fn((b, d), |_| rng.gen_range(-2.0..2.0));
            let t = Array2::from_shape_fn((b, d), |_| rng.gen_range(-2.0..2.0));
            let y: Vec<usize> = (0..b).map(|_| rng.gen_range(0..d)).collect();
            let w: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..2.0)).collect();
            let bits = t.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            assert!(fd_check(&x, &|p| cross_entropy(p.view(), &y, Some(&w)), 1e-5) <= 1e-6);
            assert!(fd_check(&x, &|p| bce_with_logits(p.view(), bits.view()), 1e-5) <= 1e-6);
            assert!(fd_errors(&x, &|p| mse(p.view(), t.view()), 1e-5).1 <= 1e-8);
            assert!(fd_check(&x, &|p| clip(p.view(), t.view()).unwrap(), 1e-5) <= 1e-6);
        }
    }

    #[test]
    fn clip_ignores_row_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((5, 6), |_| rng.gen_range(-1.0..1.0));
        let (base, _) = clip(x.view(), t.view()).unwrap();
        for alpha in [0.1, 10.0] {
            let mut y = x.clone();
            y.row_mut(2).mapv_inplace(|v| v * alpha);
            let (l, _) = clip(y.view(), t.view()).unwrap();
            assert!((l - base).abs() <= 1e-9);
        }
    }
}
