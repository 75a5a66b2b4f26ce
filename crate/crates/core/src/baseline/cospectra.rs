//! Welch cross-spectral densities flattened into feature vectors.

use std::sync::Arc;

use ndarray::ArrayView2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::BaselineError;

/// Segment length in seconds; consecutive segments overlap by half.
pub const SEGMENT_SECONDS: f64 = 1.0;

pub struct Welch {
    pub sfreq: f64,
    pub nperseg: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl Welch {
    pub fn new(sfreq: f64, n_times: usize) -> Result<Welch, BaselineError> {
        let nperseg = (SEGMENT_SECONDS * sfreq).round() as usize;
        if nperseg < 2 || n_times < nperseg {
            return Err(BaselineError::Empty(format!(
                "window of {n_times} samples is shorter than one {nperseg}-sample segment"
            )));
        }
        // Periodic Hann.
        let window: Vec<f64> = (0..nperseg)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / nperseg as f64).cos())
            .collect();
        let scale = 1.0 / (sfreq * window.iter().map(|w| w * w).sum::<f64>());
        let fft = FftPlanner::new().plan_fft_forward(nperseg);
        Ok(Welch { sfreq, nperseg, window, fft, scale })
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..=self.nperseg / 2).map(|k| k as f64 * self.sfreq / self.nperseg as f64).collect()
    }

    pub fn bin_of(&self, f: f64) -> usize {
        ((f * self.nperseg as f64 / self.sfreq).round() as usize).min(self.nperseg / 2)
    }

    /// Averaged one-sided spectra per channel: `[channel][segment][bin]`.
    fn spectra(&self, x: ArrayView2<'_, f32>) -> Vec<Vec<Vec<Complex64>>> {
        let (c, t) = x.dim();
        let step = self.nperseg - self.nperseg / 2;
        let n_seg = (t - self.nperseg) / step + 1;
        let n_bins = self.nperseg / 2 + 1;
        (0..c)
            .map(|ch| {
                (0..n_seg)
                    .map(|s| {
                        let seg: Vec<f64> =
                            (0..self.nperseg).map(|i| f64::from(x[[ch, s * step + i]])).collect();
                        let m = seg.iter().sum::<f64>() / self.nperseg as f64;
                        let mut buf: Vec<Complex64> =
                            seg.iter().zip(&self.window).map(|(v, w)| Complex64::new((v - m) * w, 0.0)).collect();
                        self.fft.process(&mut buf);
                        buf.truncate(n_bins);
                        buf
                    })
                    .collect()
            })
            .collect()
    }

    /// Real part of the density-scaled cross spectrum at `bins`, as `[bin][i][j]`.
    pub fn cospectra(&self, x: ArrayView2<'_, f32>, bins: &[usize]) -> Vec<Vec<Vec<f64>>> {
        let spec = self.spectra(x);
        let c = spec.len();
        let n_seg = spec.first().map_or(1, Vec::len) as f64;
        let nyq_bin = if self.nperseg % 2 == 0 { Some(self.nperseg / 2) } else { None };
        bins.iter()
            .map(|&b| {
                let one_sided = if b == 0 || Some(b) == nyq_bin { 1.0 } else { 2.0 };
                let mut m = vec![vec![0.0; c]; c];
                for i in 0..c {
                    for j in i..c {
                        let s: f64 = spec[i].iter().zip(&spec[j]).map(|(a, bb)| (a[b].conj() * bb[b]).re).sum();
                        let v = s / n_seg * self.scale * one_sided;
                        m[i][j] = v;
                        m[j][i] = v;
                    }
                }
                m
            })
            .collect()
    }

    /// Upper triangles per bin, `ln(1 + x)` on the diagonal, bins concatenated.
    pub fn features(&self, x: ArrayView2<'_, f32>, bins: &[usize]) -> Vec<f64> {
        let mut out = Vec::new();
        for m in self.cospectra(x, bins) {
            for i in 0..m.len() {
                out.push(m[i][i].max(0.0).ln_1p());
                out.extend(m[i].iter().skip(i + 1).copied());
            }
        }
        out
    }
}

/// Bins nearest each frequency and its first harmonic below Nyquist; without
/// explicit frequencies, every bin from 1 to 30 Hz.
pub fn select_bins(welch: &Welch, freqs: &[f64]) -> Result<Vec<usize>, BaselineError> {
    let nyq = welch.sfreq / 2.0;
    let mut bins = Vec::new();
    if freqs.is_empty() {
        let hi = 30.0f64.min(nyq);
        bins.extend(welch.bin_of(1.0)..=welch.bin_of(hi));
    } else {
        for &f in freqs {
            if !(0.0..=nyq).contains(&f) {
                return Err(BaselineError::Empty(format!("frequency {f} Hz outside [0, {nyq}] Hz")));
            }
            bins.push(welch.bin_of(f));
            if 2.0 * f < nyq {
                bins.push(welch.bin_of(2.0 * f));
            }
        }
    }
    bins.sort_unstable();
    bins.dedup();
    Ok(bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn shared_sinusoid_is_coherent() {
        let fs = 100.0;
        let x = Array2::from_shape_fn((2, 800), |(_, t)| (2.0 * std::f64::consts::PI * 12.0 * t as f64 / fs).sin() as f32);
        let w = Welch::new(fs, 800).unwrap();
        let m = &w.cospectra(x.view(), &[w.bin_of(12.0)])[0];
        assert!((m[0][1] / m[0][0] - 1.0).abs() < 1e-6);
        // Sinusoid of unit amplitude: density integrates to power 1/2.
        let total: f64 = w.cospectra(x.view(), &(0..=50).collect::<Vec<_>>()).iter().map(|b| b[0][0]).sum::<f64>() * fs / 100.0;
        assert!((total - 0.5).abs() < 0.01, "{total}");
    }

    #[test]
    fn independent_noise_has_small_cross_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x = Array2::from_shape_fn((2, 40000), |_| n.sample(&mut rng) as f32);
        let w = Welch::new(100.0, 40000).unwrap();
        for m in w.cospectra(x.view(), &[5, 12, 30]) {
            assert!(m[0][1].abs() / m[0][0] < 0.1);
            assert!(m[0][0] >= 0.0 && m[1][1] >= 0.0);
        }
    }

    #[test]
    fn feature_layout() {
        let x = Array2::from_shape_fn((3, 200), |(c, t)| ((c + 1) as f32 * t as f32 * 0.1).sin());
        let w = Welch::new(100.0, 200).unwrap();
        let bins = select_bins(&w, &[8.0, 11.0]).unwrap();
        assert_eq!(bins, vec![8, 11, 16, 22]);
        let f = w.features(x.view(), &bins);
        assert_eq!(f.len(), 4 * 6);
        assert!(f.iter().all(|v| v.is_finite()));
        assert!(select_bins(&w, &[80.0]).is_err());
        assert!(Welch::new(100.0, 50).is_err());
    }
}
