//! Robust per-channel scaling and clamping.

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// `(median, q75 - q25)` of one channel.
pub fn median_iqr(x: &[f64]) -> (f64, f64) {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let med = quantile_sorted(&s, 0.5);
    (med, quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25))
}

/// Scales in place; returns `true` when the IQR was zero and 1 was used instead.
pub fn robust_scale_channel(x: &mut [f64]) -> bool {
    let (med, iqr) = median_iqr(x);
    let degenerate = iqr == 0.0;
    let div = if degenerate { 1.0 } else { iqr };
    for v in x.iter_mut() {
        *v = (*v - med) / div;
    }
    degenerate
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), 2.0);
        assert_eq!(quantile_sorted(&s, 0.25), 1.0);
        assert_eq!(quantile_sorted(&[1.0, 2.0], 0.25), 1.25);
    }

    #[test]
    fn tiled_ramp_scales_to_zero_median() {
        let mut x: Vec<f64> = (0..50).map(|i| (i % 5) as f64).collect();
        assert_eq!(median_iqr(&x), (2.0, 2.0));
        assert!(!robust_scale_channel(&mut x));
        assert_eq!(median_iqr(&x).0, 0.0);
    }

    #[test]
    fn constant_channel_is_flagged() {
        let mut x = vec![7.0; 10];
        assert!(robust_scale_channel(&mut x));
        assert!(x.iter().all(|&v| v == 0.0));
    }
}
