//! Kendall's tau-b in O(n log n) (Knight's merge-sort counting).

use serde::{Deserialize, Serialize};

use super::RankError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kendall {
    pub tau: f64,
    /// Two-sided, normal approximation with tie-adjusted variance.
    pub p_value: f64,
    pub n: usize,
}

/// Sizes of runs of equal values in a sorted slice.
fn tie_groups(sorted: &[f64]) -> Vec<u64> {
    let mut out = Vec::new();
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            out.push(run);
            run = 1;
        }
    }
    if !sorted.is_empty() {
        out.push(run);
    }
    out
}

fn pairs(groups: &[u64]) -> u64 {
    groups.iter().map(|t| t * (t - 1) / 2).sum()
}

/// Sorts `v` in place, returning the number of inversions removed.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], &mut buf[..mid]) + merge_count(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<Kendall, RankError> {
    if a.len() != b.len() {
        return Err(RankError::Mismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(RankError::TooFew { what: "paired values".into(), found: n, needed: 2 });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(RankError::Mismatch("non-finite value".into()));
    }
    let mut xy: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    xy.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
    let gx = tie_groups(&xs);
    let n1 = pairs(&gx);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in xy.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;

    let mut ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut buf);
    let gy = tie_groups(&ys);
    let n2 = pairs(&gy);

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    if n0 == n1 || n0 == n2 {
        return Err(RankError::Degenerate("one ranking is constant".into()));
    }
    let s = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let tau = (s / (((n0 - n1) as u128 * (n0 - n2) as u128) as f64).sqrt()).clamp(-1.0, 1.0);

    let nf = n as f64;
    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let sum_of = |g: &[u64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
    let vt = sum_of(&gx, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let vu = sum_of(&gy, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
    let v1 = sum_of(&gx, &|t| t * (t - 1.0)) * sum_of(&gy, &|t| t * (t - 1.0));
    let v2 = sum_of(&gx, &|t| t * (t - 1.0) * (t - 2.0)) * sum_of(&gy, &|t| t * (t - 1.0) * (t - 2.0));
    let mut var = (v0 - vt - vu) / 18.0 + v1 / (2.0 * nf * (nf - 1.0));
    if n > 2 {
        var += v2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    }
    let z = s / var.sqrt();
    let p_value = libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0);
    Ok(Kendall { tau, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(a: &[f64], b: &[f64]) -> Option<f64> {
        let (mut c, mut d, mut ta, mut tb) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                let x = (a[i] - a[j]).signum() * if a[i] == a[j] { 0.0 } else { 1.0 };
                let y = (b[i] - b[j]).signum() * if b[i] == b[j] { 0.0 } else { 1.0 };
                if x == 0.0 {
                    ta += 1;
                }
                if y == 0.0 {
                    tb += 1;
                }
                if x * y > 0.0 {
                    c += 1;
                } else if x * y < 0.0 {
                    d += 1;
                }
            }
        }
        let n0 = (a.len() * (a.len() - 1) / 2) as i64;
        if n0 == ta || n0 == tb {
            return None;
        }
        Some((c - d) as f64 / (((n0 - ta) * (n0 - tb)) as f64).sqrt())
    }

    #[test]
    fn examples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a).unwrap().tau, 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap().tau, -1.0);
        let t = kendall_tau(&a, &[1.0, 2.0, 4.0, 3.0]).unwrap().tau;
        assert!((t - 4.0 / 6.0).abs() < 1e-15);
        assert!(kendall_tau(&a, &[1.0; 4]).is_err());
        assert!(kendall_tau(&a, &[1.0]).is_err());
    }

    #[test]
    fn matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let n = rng.gen_range(2..=32);
            let levels = rng.gen_range(1..=6) as f64;
            let a: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor()).collect();
            let b: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * levels).floor()).collect();
            match (kendall_tau(&a, &b), brute(&a, &b)) {
                (Ok(k), Some(t)) => assert!((k.tau - t).abs() < 1e-12, "{a:?} {b:?}"),
                (Err(_), None) => {}
                (x, y) => panic!("{x:?} vs {y:?}"),
            }
        }
    }

    #[test]
    fn p_value_without_ties() {
        // z = 3·S / sqrt(n(n-1)(2n+5)/2) for tie-free data.
        let a: Vec<f64> = (0..10).map(f64::from).collect();
        let k = kendall_tau(&a, &a).unwrap();
        let z = 45.0 / (10.0 * 9.0 * 25.0 / 18.0f64).sqrt();
        assert!((k.p_value - libm::erfc(z / 2f64.sqrt())).abs() < 1e-15);
        assert!(k.p_value < 1e-3);
    }
}
