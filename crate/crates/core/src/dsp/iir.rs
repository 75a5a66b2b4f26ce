//! IIR filter design (Butterworth, notch) and zero-phase application as second-order sections.

use std::f64::consts::PI;

/// One biquad `[b0, b1, b2, a0, a1, a2]` with `a0 == 1`.
pub type Sos = [f64; 6];

/// Maps an analog biquad `(b2 s² + b1 s + b0) / (s² + a1 s + a0)` through the bilinear transform.
fn bilinear(b: [f64; 3], a1: f64, a0: f64, fs: f64) -> Sos {
    let k = 2.0 * fs;
    let k2 = k * k;
    let [b0, b1, b2] = b;
    let d0 = k2 + a1 * k + a0;
    let d1 = -2.0 * k2 + 2.0 * a0;
    let d2 = k2 - a1 * k + a0;
    let n0 = b2 * k2 + b1 * k + b0;
    let n1 = -2.0 * b2 * k2 + 2.0 * b0;
    let n2 = b2 * k2 - b1 * k + b0;
    [n0 / d0, n1 / d0, n2 / d0, 1.0, d1 / d0, d2 / d0]
}

fn prewarp(f: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * f / fs).tan()
}

/// Real parts of the upper-half-plane Butterworth prototype poles.
fn prototype_pole_reals(order: usize) -> Vec<f64> {
    assert!(order >= 2 && order % 2 == 0, "Butterworth order must be even");
    (0..order / 2)
        .map(|k| (PI * (2 * k + order + 1) as f64 / (2 * order) as f64).cos())
        .collect()
}

pub fn butter_lowpass(order: usize, cutoff: f64, fs: f64) -> Vec<Sos> {
    let wa = prewarp(cutoff, fs);
    prototype_pole_reals(order)
        .into_iter()
        .map(|re| bilinear([wa * wa, 0.0, 0.0], -2.0 * re * wa, wa * wa, fs))
        .collect()
}

pub fn butter_highpass(order: usize, cutoff: f64, fs: f64) -> Vec<Sos> {
    let wa = prewarp(cutoff, fs);
    prototype_pole_reals(order)
        .into_iter()
        .map(|re| bilinear([0.0, 0.0, 1.0], -2.0 * re * wa, wa * wa, fs))
        .collect()
}

/// High-pass at `low` cascaded with low-pass at `high`.
pub fn butter_bandpass(order: usize, low: f64, high: f64, fs: f64) -> Vec<Sos> {
    let mut sos = butter_highpass(order, low, fs);
    sos.extend(butter_lowpass(order, high, fs));
    sos
}

/// Second-order notch at `f0` with quality factor `q`.
pub fn iir_notch(f0: f64, q: f64, fs: f64) -> Sos {
    let w0 = 2.0 * PI * f0 / fs;
    let bw = w0 / q;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    [gain, -2.0 * gain * c, gain, 1.0, -2.0 * gain * c, 2.0 * gain - 1.0]
}

/// Steady-state step-response state of the cascade, per section.
pub fn sosfilt_zi(sos: &[Sos]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let [b0, b1, b2, _, a1, a2] = *s;
            let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
            let z2 = b2 - a2 * g;
            let z1 = g - b0;
            let zi = [z1 * scale, z2 * scale];
            scale *= g;
            zi
        })
        .collect()
}

/// Runs the cascade in place (transposed direct form II).
pub fn sosfilt(sos: &[Sos], x: &mut [f64], state: &mut [[f64; 2]]) {
    for (s, z) in sos.iter().zip(state.iter_mut()) {
        let [b0, b1, b2, _, a1, a2] = *s;
        let (mut z1, mut z2) = (z[0], z[1]);
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
        *z = [z1, z2];
    }
}

/// Edge padding length used for forward-backward filtering.
pub fn padlen(sos: &[Sos]) -> usize {
    3 * (2 * sos.len() + 1)
}

/// Zero-phase forward-backward filtering with odd-extension padding.
pub fn sosfiltfilt(sos: &[Sos], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 || sos.is_empty() {
        return x.to_vec();
    }
    let pad = padlen(sos).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let zi = sosfilt_zi(sos);

    let x0 = ext[0];
    let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect();
    sosfilt(sos, &mut ext, &mut state);

    ext.reverse();
    let y0 = ext[0];
    let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * y0, z[1] * y0]).collect();
    sosfilt(sos, &mut ext, &mut state);
    ext.reverse();

    ext[pad..pad + n].to_vec()
}

/// Analytic magnitude response of the cascade at `f` Hz (single pass).
pub fn magnitude(sos: &[Sos], f: f64, fs: f64) -> f64 {
    let w = 2.0 * PI * f / fs;
    let (c1, s1) = (w.cos(), -w.sin());
    let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
    sos.iter()
        .map(|s| {
            let nr = s[0] + s[1] * c1 + s[2] * c2;
            let ni = s[1] * s1 + s[2] * s2;
            let dr = 1.0 + s[4] * c1 + s[5] * c2;
            let di = s[4] * s1 + s[5] * s2;
            ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
        })
        .product()
}
