//! Linear warmup followed by cosine annealing to zero.

pub fn warmup_steps(total_steps: usize, warmup_fraction: f64) -> usize {
    ((warmup_fraction * total_steps as f64).round() as usize).min(total_steps)
}

pub fn cosine_warmup_lr(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    let step = step.min(total_steps);
    let warm = warmup_steps(total_steps, warmup_fraction);
    if step < warm {
        return base_lr * step as f64 / warm as f64;
    }
    if total_steps == warm {
        return base_lr;
    }
    let progress = (step - warm) as f64 / (total_steps - warm) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        assert_eq!(cosine_warmup_lr(0, 100, 1e-3, 0.1), 0.0);
        assert_eq!(cosine_warmup_lr(10, 100, 1e-3, 0.1), 1e-3);
        assert!(cosine_warmup_lr(100, 100, 1e-3, 0.1).abs() < 1e-12);
        assert!((cosine_warmup_lr(5, 100, 1e-3, 0.1) - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn monotone_after_warmup() {
        let lrs: Vec<f64> = (10..=100).map(|s| cosine_warmup_lr(s, 100, 1.0, 0.1)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
