//! Recording-level preprocessing and per-epoch baseline correction.
//!
//! Stage order is fixed: bandpass, notch, resample, robust scaling, clamp.
//! Epoching and baseline correction follow in the data layer.

pub mod iir;
pub mod resample;
pub mod scale;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{PreprocSpec, PreprocStage};
use crate::domain::{ExampleSet, Recording};

pub const FILTER_ORDER: usize = 4;
pub const NOTCH_Q: f64 = 30.0;
/// Harmonic notches get a higher Q so that none is wider than this (Hz).
pub const NOTCH_MAX_WIDTH: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("invalid band [{low}, {high}] Hz at Nyquist {nyquist} Hz")]
    InvalidBand { low: f64, high: f64, nyquist: f64 },
    #[error("invalid sampling rate {0}")]
    InvalidRate(f64),
    #[error("clamp bound must be positive, got {0}")]
    InvalidBound(f64),
    #[error("baseline interval [{t0}, {t1}] s: {reason}")]
    BaselineInterval { t0: f64, t1: f64, reason: String },
}

fn rows_f64(data: &Array2<f32>) -> Vec<Vec<f64>> {
    data.axis_iter(Axis(0)).map(|row| row.iter().map(|&v| f64::from(v)).collect()).collect()
}

fn map_channels<F>(data: &Array2<f32>, f: F) -> Array2<f32>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let rows: Vec<Vec<f64>> = rows_f64(data).par_iter().map(|x| f(x)).collect();
    let n_cols = rows.first().map_or(0, Vec::len);
    let mut out = Array2::<f32>::zeros((rows.len(), n_cols));
    for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(&rows) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *s as f32;
        }
    }
    out
}

fn with_data(rec: &Recording, data: Array2<f32>, sfreq: f64) -> Recording {
    Recording {
        recording_id: rec.recording_id.clone(),
        subject_id: rec.subject_id.clone(),
        session_id: rec.session_id.clone(),
        sfreq,
        channels: rec.channels.clone(),
        data,
        events: rec.events.clone(),
    }
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass(rec: &Recording, low: f64, high: f64) -> Result<Recording, DspError> {
    let nyquist = rec.sfreq / 2.0;
    if !(low > 0.0 && low < high && high < nyquist) {
        return Err(DspError::InvalidBand { low, high, nyquist });
    }
    let sos = iir::butter_bandpass(FILTER_ORDER, low, high, rec.sfreq);
    let data = map_channels(&rec.data, |x| iir::sosfiltfilt(&sos, x));
    Ok(with_data(rec, data, rec.sfreq))
}

/// Base frequencies and their harmonics strictly below Nyquist, deduplicated and sorted.
pub fn notch_harmonics(base: &[f64], nyquist: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &f in base {
        if !(f > 0.0) {
            continue;
        }
        let mut k = 1.0;
        while k * f < nyquist {
            out.push(k * f);
            k += 1.0;
        }
    }
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup();
    out
}

/// Zero-phase notches at `freqs`; frequencies at or above Nyquist are skipped and returned.
pub fn notch(rec: &Recording, freqs: &[f64]) -> (Recording, Vec<f64>) {
    let nyquist = rec.sfreq / 2.0;
    let (kept, skipped): (Vec<f64>, Vec<f64>) = freqs.iter().partition(|&&f| f > 0.0 && f < nyquist);
    for f in &skipped {
        log::info!("notch at {f} Hz skipped (Nyquist {nyquist} Hz)");
    }
    if kept.is_empty() {
        return (rec.clone(), skipped);
    }
    let sos: Vec<iir::Sos> = kept.iter().map(|&f| iir::iir_notch(f, NOTCH_Q.max(f / NOTCH_MAX_WIDTH), rec.sfreq)).collect();
    let data = map_channels(&rec.data, |x| iir::sosfiltfilt(&sos, x));
    (with_data(rec, data, rec.sfreq), skipped)
}

/// Band-limited resampling; event onsets keep their times in seconds.
pub fn resample(rec: &Recording, target_sfreq: f64) -> Result<Recording, DspError> {
    if !(target_sfreq > 0.0 && target_sfreq.is_finite()) {
        return Err(DspError::InvalidRate(target_sfreq));
    }
    if target_sfreq == rec.sfreq {
        return Ok(rec.clone());
    }
    let r = resample::Resampler::new(rec.sfreq, target_sfreq);
    let data = map_channels(&rec.data, |x| r.apply(x));
    let mut out = with_data(rec, data, target_sfreq);
    let duration = out.duration();
    for ev in &mut out.events {
        ev.onset = ev.onset.min(duration);
    }
    Ok(out)
}

/// Channel-wise `(x - median) / IQR` over the whole recording; returns channels with zero IQR.
pub fn robust_scale(rec: &Recording) -> (Recording, Vec<String>) {
    let flags: Vec<bool> = rows_f64(&rec.data).par_iter().map(|x| scale::median_iqr(x).1 == 0.0).collect();
    let data = map_channels(&rec.data, |x| {
        let mut y = x.to_vec();
        scale::robust_scale_channel(&mut y);
        y
    });
    let flat = rec
        .channels
        .iter()
        .zip(&flags)
        .filter(|(_, &f)| f)
        .map(|(c, _)| c.clone())
        .collect();
    (with_data(rec, data, rec.sfreq), flat)
}

pub fn clamp(rec: &Recording, bound: f64) -> Result<Recording, DspError> {
    if !(bound > 0.0) {
        return Err(DspError::InvalidBound(bound));
    }
    let b = bound as f32;
    let data = rec.data.mapv(|v| v.clamp(-b, b));
    Ok(with_data(rec, data, rec.sfreq))
}

/// Subtracts, per example and channel, the mean over `[t0, t1)` seconds from window start.
pub fn baseline_correct(es: &ExampleSet, interval: [f64; 2]) -> Result<ExampleSet, DspError> {
    let [t0, t1] = interval;
    let fail = |reason: &str| DspError::BaselineInterval { t0, t1, reason: reason.into() };
    if !(t0 >= 0.0 && t1 <= es.duration + 1e-9 && t0 < t1) {
        return Err(fail("outside the window"));
    }
    let i0 = (t0 * es.sfreq).round() as usize;
    let i1 = ((t1 * es.sfreq).round() as usize).min(es.n_times());
    if i1 <= i0 {
        return Err(fail("covers no samples"));
    }
    let mut out = es.clone();
    for mut ex in out.windows.axis_iter_mut(Axis(0)) {
        for mut ch in ex.axis_iter_mut(Axis(0)) {
            let mean = ch.iter().skip(i0).take(i1 - i0).map(|&v| f64::from(v)).sum::<f64>() / (i1 - i0) as f64;
            ch.mapv_inplace(|v| (f64::from(v) - mean) as f32);
        }
    }
    Ok(out)
}

/// What the pipeline did to one recording.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreprocReport {
    pub stages: Vec<String>,
    pub flat_channels: Vec<String>,
    pub skipped_notches: Vec<f64>,
    /// The band actually applied, when it differs from the configured one.
    pub clipped_band: Option<[f64; 2]>,
}

/// Applies the enabled stages in their fixed order.
pub fn preprocess(rec: &Recording, spec: &PreprocSpec) -> Result<(Recording, PreprocReport), DspError> {
    let mut report = PreprocReport::default();
    let mut cur = rec.clone();
    for stage in PreprocStage::ORDER {
        if !spec.enabled(stage) {
            continue;
        }
        match stage {
            PreprocStage::Bandpass => {
                let nyquist = cur.sfreq / 2.0;
                let [low, mut high] = spec.band;
                if high >= nyquist {
                    high = 0.99 * nyquist;
                    log::info!("band edge {} Hz clipped to {high} Hz", spec.band[1]);
                    report.clipped_band = Some([low, high]);
                }
                cur = bandpass(&cur, low, high)?;
            }
            PreprocStage::Notch => {
                let nyquist = cur.sfreq / 2.0;
                let mut freqs = notch_harmonics(&spec.notch_freqs, nyquist);
                freqs.extend(spec.notch_freqs.iter().filter(|&&f| f >= nyquist));
                let (next, skipped) = notch(&cur, &freqs);
                cur = next;
                report.skipped_notches = skipped;
            }
            PreprocStage::Resample => cur = resample(&cur, spec.target_sfreq)?,
            PreprocStage::RobustScale => {
                let (next, flat) = robust_scale(&cur);
                for c in &flat {
                    log::warn!("{}: channel {c} has zero IQR, left unscaled", cur.recording_id);
                }
                cur = next;
                report.flat_channels = flat;
            }
            PreprocStage::Clamp => cur = clamp(&cur, spec.clamp)?,
        }
        log::debug!("{}: {}", rec.recording_id, stage.as_str());
        report.stages.push(stage.as_str().to_string());
    }
    Ok((cur, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Target;
    use ndarray::Array3;

    fn rec(data: Array2<f32>, sfreq: f64) -> Recording {
        let channels = (0..data.nrows()).map(|i| format!("ch{i}")).collect();
        Recording::new("r", "s", "ses", sfreq, channels, data, vec![]).unwrap()
    }

    #[test]
    fn inverted_band_is_rejected() {
        let r = rec(Array2::zeros((1, 100)), 250.0);
        assert!(matches!(bandpass(&r, 75.0, 0.1), Err(DspError::InvalidBand { .. })));
        assert!(bandpass(&r, 1.0, 125.0).is_err());
    }

    #[test]
    fn harmonics_stop_below_nyquist() {
        assert_eq!(notch_harmonics(&[50.0, 60.0], 120.0), vec![50.0, 60.0, 100.0]);
        assert_eq!(notch_harmonics(&[50.0, 60.0], 60.0), vec![50.0]);
    }

    #[test]
    fn notch_above_nyquist_is_skipped() {
        let r = rec(Array2::from_elem((1, 240), 1.0), 120.0);
        let (out, skipped) = notch(&r, &[50.0, 100.0]);
        assert_eq!(skipped, vec![100.0]);
        assert_eq!(out.n_samples(), 240);
    }

    #[test]
    fn identity_resample_is_bit_exact() {
        let data = Array2::from_shape_fn((2, 50), |(c, t)| ((c * 7 + t) as f32).sin());
        let r = rec(data, 120.0);
        assert_eq!(resample(&r, 120.0).unwrap(), r);
    }

    #[test]
    fn clamp_bounds() {
        let r = rec(Array2::from_shape_vec((1, 3), vec![25.0, -25.0, 3.0]).unwrap(), 10.0);
        let c = clamp(&r, 20.0).unwrap();
        assert_eq!(c.data.as_slice().unwrap(), &[20.0, -20.0, 3.0]);
        assert!(clamp(&r, 0.0).is_err());
    }

    #[test]
    fn baseline_correct_examples() {
        let n_times = 100;
        let sfreq = 100.0;
        let mut es = ExampleSet::empty(1, n_times, sfreq, -0.2, 1.0);
        es.windows = Array3::from_shape_fn((2, 1, n_times), |(e, _, t)| {
            let c = 3.0 + e as f64;
            (c + (2.0 * std::f64::consts::PI * 5.0 * t as f64 / sfreq).sin()) as f32
        });
        es.targets = vec![Target::Scalar(0.0); 2];
        let out = baseline_correct(&es, [0.0, 0.2]).unwrap();
        for e in 0..2 {
            for t in 0..n_times {
                let want = (2.0 * std::f64::consts::PI * 5.0 * t as f64 / sfreq).sin();
                assert!((f64::from(out.windows[[e, 0, t]]) - want).abs() < 1e-6);
            }
        }
        assert!(baseline_correct(&es, [0.5, 1.5]).is_err());
        assert!(baseline_correct(&es, [0.2, 0.2]).is_err());
    }
}
