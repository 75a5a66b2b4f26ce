//! Adam with decoupled weight decay.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamW {
    pub fn new(n_params: usize) -> AdamW {
        AdamW { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * mhat / (vhat.sqrt() + EPS) + lr * weight_decay * params[i];
        }
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_by_hand() {
        let mut opt = AdamW::new(1);
        let mut theta = [1.0];
        opt.step(&mut theta, &[1.0], 0.1, 0.05);
        // m̂ = 1, v̂ = 1 after bias correction.
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8)) - 0.1 * 0.05 * 1.0;
        assert!((theta[0] - expect).abs() < 1e-10);
        assert!((theta[0] - 0.895).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_and_decay_is_a_no_op() {
        let mut opt = AdamW::new(3);
        let mut theta = [0.5, -2.0, 3.0];
        for _ in 0..10 {
            opt.step(&mut theta, &[0.0; 3], 0.1, 0.0);
        }
        assert_eq!(theta, [0.5, -2.0, 3.0]);
    }

    #[test]
    fn quadratic_converges() {
        let mut opt = AdamW::new(1);
        let mut theta = [1.0];
        for _ in 0..500 {
            let g = [theta[0]];
            opt.step(&mut theta, &g, 0.05, 0.0);
        }
        assert!(theta[0].abs() < 1e-3, "{}", theta[0]);
        assert!(opt.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
    }
}
