//! Band-limited resampling with a Kaiser-windowed sinc kernel.

use std::f64::consts::PI;

pub const KAISER_BETA: f64 = 8.0;
/// Anti-aliasing cutoff as a fraction of the lower Nyquist frequency.
pub const CUTOFF_FRACTION: f64 = 0.9;
/// Sinc zero crossings kept on each side of the kernel centre.
const ZERO_CROSSINGS: f64 = 16.0;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Output length for a signal of `n_in` samples.
pub fn output_len(n_in: usize, fs_in: f64, fs_out: f64) -> usize {
    (n_in as f64 * fs_out / fs_in).round() as usize
}

/// Precomputed kernel geometry for one rate pair.
pub struct Resampler {
    fs_in: f64,
    fs_out: f64,
    /// Cutoff in cycles per input sample.
    fc: f64,
    half_width: f64,
    i0_beta: f64,
}

impl Resampler {
    pub fn new(fs_in: f64, fs_out: f64) -> Self {
        let fc = CUTOFF_FRACTION * 0.5 * fs_in.min(fs_out) / fs_in;
        Resampler {
            fs_in,
            fs_out,
            fc,
            half_width: ZERO_CROSSINGS / (2.0 * fc),
            i0_beta: bessel_i0(KAISER_BETA),
        }
    }

    fn kernel(&self, d: f64) -> f64 {
        let r = d / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.i0_beta;
        2.0 * self.fc * sinc(2.0 * self.fc * d) * w
    }

    /// Resamples one channel; taps are renormalized per output phase to unit DC gain.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n_out = output_len(x.len(), self.fs_in, self.fs_out);
        match rational_ratio(self.fs_in, self.fs_out) {
            Some((up, down)) => self.apply_polyphase(x, n_out, up, down),
            None => (0..n_out)
                .map(|m| {
                    let u = m as f64 * self.fs_in / self.fs_out;
                    let lo = (u - self.half_width).ceil() as isize;
                    let taps = self.taps(u - lo as f64);
                    dot_window(x, lo, &taps)
                })
                .collect(),
        }
    }

    fn taps(&self, frac: f64) -> Vec<f64> {
        let count = (2.0 * self.half_width).floor() as usize + 1;
        (0..count).map(|j| self.kernel(frac - j as f64)).collect()
    }

    fn apply_polyphase(&self, x: &[f64], n_out: usize, up: u64, down: u64) -> Vec<f64> {
        // Output m sits at input position m * down / up; its phase is (m * down) mod up.
        let phases: Vec<(isize, Vec<f64>)> = (0..up)
            .map(|p| {
                let frac_pos = p as f64 / up as f64;
                let lo = (frac_pos - self.half_width).ceil() as isize;
                (lo, self.taps(frac_pos - lo as f64))
            })
            .collect();
        (0..n_out as u64)
            .map(|m| {
                let num = m * down;
                let base = (num / up) as isize;
                let (lo, taps) = &phases[(num % up) as usize];
                dot_window(x, base + lo, taps)
            })
            .collect()
    }
}

fn dot_window(x: &[f64], lo: isize, taps: &[f64]) -> f64 {
    let n = x.len() as isize;
    let (mut acc, mut wsum) = (0.0, 0.0);
    for (j, &w) in taps.iter().enumerate() {
        let k = lo + j as isize;
        if k >= 0 && k < n {
            acc += w * x[k as usize];
            wsum += w;
        }
    }
    if wsum != 0.0 {
        acc / wsum
    } else {
        0.0
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `(up, down)` with `fs_out / fs_in = up / down`, when both rates are multiples of 1 mHz.
fn rational_ratio(fs_in: f64, fs_out: f64) -> Option<(u64, u64)> {
    let a = fs_in * 1000.0;
    let b = fs_out * 1000.0;
    if (a - a.round()).abs() > 1e-6 || (b - b.round()).abs() > 1e-6 {
        return None;
    }
    let (a, b) = (a.round() as u64, b.round() as u64);
    let g = gcd(a, b);
    let (up, down) = (b / g, a / g);
    (up <= 4096).then_some((up, down))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-13);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-9);
    }

    #[test]
    fn output_length_arithmetic() {
        assert_eq!(output_len(500, 500.0, 120.0), 120);
        assert_eq!(output_len(240, 240.0, 120.0), 120);
    }

    #[test]
    fn constant_stays_constant() {
        let r = Resampler::new(240.0, 120.0);
        let y = r.apply(&vec![2.5; 480]);
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }
}
