//! Seeded synthetic recordings standing in for real datasets.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DataError;
use crate::domain::{hash_bytes, Event, ObjectiveKind, Recording};

#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// Boxcar `amplitude * pattern` from `latency` to `latency + width` after the trigger.
    EvokedDeflection { amplitude: f64, latency: f64, width: f64 },
    /// Sinusoid at the class frequency for `length` seconds. A single frequency is shared by
    /// all classes; `class_patterns` then gives each class its own spatial pattern.
    FrequencyTag { freqs: Vec<f64>, amplitude: f64, length: f64, class_patterns: bool },
    /// `amplitude * M z` shaped by a Hann bump, with `M` a fixed `[channels, dim]` mixing matrix.
    LinearEmbeddingMix { amplitude: f64, latency: f64, width: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticProfile {
    pub name: String,
    pub n_subjects: usize,
    pub n_sessions: usize,
    /// Runs per session; events are split evenly across runs.
    pub n_runs: usize,
    pub n_channels: usize,
    pub sfreq: f64,
    /// Events per session.
    pub n_events: usize,
    pub objective: ObjectiveKind,
    /// Classes, labels, 1 for regression, or the embedding dimension.
    pub n_outputs: usize,
    pub effect: Effect,
    pub noise_std: f64,
    /// 50 Hz interference amplitude relative to `noise_std`.
    pub line_noise: f64,
    pub event_type: String,
    /// Inter-stimulus interval and uniform onset jitter, seconds.
    pub isi: f64,
    pub jitter: f64,
    /// Distinct stimuli (retrieval); each session shows every concept `n_events / n_concepts` times.
    pub n_concepts: usize,
    /// Rank of the embedding table (retrieval).
    pub embedding_rank: usize,
    /// One class per subject instead of per event.
    pub subject_level_label: bool,
    pub rng_seed: u64,
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidProfile { name: self.name.clone(), reason: m });
        for (what, n) in [
            ("n_subjects", self.n_subjects),
            ("n_sessions", self.n_sessions),
            ("n_runs", self.n_runs),
            ("n_channels", self.n_channels),
            ("n_events", self.n_events),
            ("n_outputs", self.n_outputs),
        ] {
            if n == 0 {
                return bad(format!("{what} must be positive"));
            }
        }
        if !(self.sfreq > 0.0) || !(self.isi > 0.0) || self.noise_std < 0.0 || self.jitter < 0.0 {
            return bad("sfreq and isi must be positive, noise and jitter non-negative".into());
        }
        if let Effect::FrequencyTag { freqs, .. } = &self.effect {
            if freqs.is_empty() || freqs.iter().any(|&f| !(f > 0.0 && f < self.sfreq / 2.0)) {
                return bad(format!("tag frequencies {freqs:?} must lie in (0, {})", self.sfreq / 2.0));
            }
            if freqs.len() != 1 && freqs.len() != self.n_outputs {
                return bad("need one frequency per class or a single shared one".into());
            }
        }
        if self.objective == ObjectiveKind::Retrieval {
            if self.n_concepts == 0 || self.n_events % self.n_concepts != 0 {
                return bad("n_events must be a positive multiple of n_concepts".into());
            }
            if self.embedding_rank == 0 || self.embedding_rank > self.n_outputs {
                return bad("embedding_rank must lie in [1, n_outputs]".into());
            }
        }
        Ok(())
    }

    fn stream(&self, tag: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(hash_bytes(format!("{}|{}|{tag}", self.rng_seed, self.name).as_bytes()))
    }

    /// Seconds of signal an event's effect occupies after the trigger.
    fn effect_span(&self) -> f64 {
        match &self.effect {
            Effect::EvokedDeflection { latency, width, .. } | Effect::LinearEmbeddingMix { latency, width, .. } => {
                latency + width
            }
            Effect::FrequencyTag { length, .. } => *length,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Per-class spatial patterns, scaled to unit max-abs weight.
fn class_patterns(profile: &SyntheticProfile, n: usize) -> Vec<Array1<f64>> {
    let mut rng = profile.stream("patterns");
    (0..n)
        .map(|_| {
            let p = Array1::from_shape_fn(profile.n_channels, |_| gaussian(&mut rng));
            let m = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            p / m
        })
        .collect()
}

/// Fixed `[n_channels, n_outputs]` mixing matrix for embedding effects.
pub fn mixing_matrix(profile: &SyntheticProfile) -> Array2<f64> {
    let mut rng = profile.stream("mixing");
    let scale = 1.0 / (profile.n_outputs as f64).sqrt();
    Array2::from_shape_fn((profile.n_channels, profile.n_outputs), |_| gaussian(&mut rng) * scale)
}

pub fn concept_id(k: usize) -> String {
    format!("c{:04}", k + 1)
}

/// Embedding table of a retrieval profile: `concept_id -> vector`, rank `embedding_rank`.
pub fn embedding_table(profile: &SyntheticProfile) -> BTreeMap<String, Vec<f64>> {
    let mut rng = profile.stream("embeddings");
    let d = profile.n_outputs;
    let r = profile.embedding_rank.max(1);
    let basis = Array2::from_shape_fn((d, r), |_| gaussian(&mut rng) / (r as f64).sqrt());
    (0..profile.n_concepts)
        .map(|k| {
            let w = Array1::from_shape_fn(r, |_| gaussian(&mut rng));
            (concept_id(k), basis.dot(&w).to_vec())
        })
        .collect()
}

fn format_scalar(v: f64) -> String {
    format!("{v:.4}")
}

/// Per-event annotation before it becomes an [`Event`].
struct Planned {
    onset: f64,
    description: String,
    concept: Option<String>,
    /// Class index, label set, scalar or concept index driving the effect.
    drive: Drive,
}

enum Drive {
    Class(usize),
    Labels(Vec<bool>),
    Value(f64),
    Concept(usize),
}

/// Generates every recording of a profile, ordered by subject then session.
pub fn generate_synthetic(profile: &SyntheticProfile) -> Result<Vec<Recording>, DataError> {
    profile.validate()?;
    let n_classes = match profile.objective {
        ObjectiveKind::Regression | ObjectiveKind::Retrieval => 1,
        _ => profile.n_outputs,
    };
    let patterns = class_patterns(profile, n_classes);
    let mixing = (profile.objective == ObjectiveKind::Retrieval).then(|| mixing_matrix(profile));
    let embeddings: Vec<Vec<f64>> = if profile.objective == ObjectiveKind::Retrieval {
        embedding_table(profile).into_values().collect()
    } else {
        vec![]
    };
    let label_rates: Vec<f64> = (0..profile.n_outputs).map(|l| 0.2 + 0.1 * (l % 4) as f64).collect();
    let channels: Vec<String> = (0..profile.n_channels).map(|c| format!("EEG{:03}", c + 1)).collect();

    let mut out = Vec::with_capacity(profile.n_subjects * profile.n_sessions);
    for s in 0..profile.n_subjects {
        for sess in 0..profile.n_sessions {
            let subject = format!("sub-{:02}", s + 1);
            let session = format!("ses-{:02}", sess + 1);
            let mut rng = profile.stream(&format!("{subject}/{session}"));
            let lead = 1.0;
            let tail = profile.effect_span() + 1.0;
            let duration = lead + profile.n_events as f64 * profile.isi + profile.jitter + tail;
            let n_samples = (duration * profile.sfreq).round() as usize;

            let concept_order: Vec<usize> = if profile.objective == ObjectiveKind::Retrieval {
                let reps = profile.n_events / profile.n_concepts;
                let mut order: Vec<usize> = (0..profile.n_concepts).flat_map(|k| std::iter::repeat(k).take(reps)).collect();
                order.shuffle(&mut rng);
                order
            } else {
                vec![]
            };

            let mut plan = Vec::with_capacity(profile.n_events);
            for e in 0..profile.n_events {
                let onset = lead + e as f64 * profile.isi + rng.gen::<f64>() * profile.jitter;
                let onset = (onset * profile.sfreq).round() / profile.sfreq;
                let (description, concept, drive) = match profile.objective {
                    ObjectiveKind::BinaryClassification | ObjectiveKind::MulticlassClassification => {
                        let c = if profile.subject_level_label { s % n_classes } else { rng.gen_range(0..n_classes) };
                        (format!("class_{c}"), None, Drive::Class(c))
                    }
                    ObjectiveKind::MultilabelClassification => {
                        let labels: Vec<bool> = label_rates.iter().map(|&p| rng.gen::<f64>() < p).collect();
                        let names: Vec<String> =
                            labels.iter().enumerate().filter(|(_, &b)| b).map(|(l, _)| format!("label_{l}")).collect();
                        let d = if names.is_empty() { "none".to_string() } else { names.join("+") };
                        (d, None, Drive::Labels(labels))
                    }
                    ObjectiveKind::Regression => {
                        let v: f64 = format_scalar(0.3 + 0.6 * rng.gen::<f64>()).parse().expect("formatted float");
                        (format_scalar(v), None, Drive::Value(v))
                    }
                    ObjectiveKind::Retrieval => {
                        let k = concept_order[e];
                        (concept_id(k), Some(concept_id(k)), Drive::Concept(k))
                    }
                };
                plan.push(Planned { onset, description, concept, drive });
            }

            let mut data = Array2::<f64>::zeros((profile.n_channels, n_samples));
            for p in &plan {
                let t0 = (p.onset * profile.sfreq).round() as usize;
                match &profile.effect {
                    Effect::EvokedDeflection { amplitude, latency, width } => {
                        let spatial = match &p.drive {
                            Drive::Class(c) => patterns[*c].clone() * *amplitude,
                            Drive::Labels(l) => {
                                let mut acc = Array1::zeros(profile.n_channels);
                                for (i, &on) in l.iter().enumerate() {
                                    if on {
                                        acc = acc + &patterns[i % patterns.len()];
                                    }
                                }
                                acc * *amplitude
                            }
                            Drive::Value(v) => patterns[0].clone() * (*amplitude * *v / 0.6),
                            Drive::Concept(_) => patterns[0].clone() * *amplitude,
                        };
                        let a = t0 + (latency * profile.sfreq).round() as usize;
                        let b = a + (width * profile.sfreq).round() as usize;
                        for ch in 0..profile.n_channels {
                            for t in a..b.min(n_samples) {
                                data[[ch, t]] += spatial[ch];
                            }
                        }
                    }
                    Effect::FrequencyTag { freqs, amplitude, length, class_patterns: per_class } => {
                        let c = match p.drive {
                            Drive::Class(c) => c,
                            _ => 0,
                        };
                        let f = if freqs.len() == 1 { freqs[0] } else { freqs[c] };
                        let spatial = if *per_class { &patterns[c] } else { &patterns[0] };
                        let phase = rng.gen::<f64>() * 2.0 * PI;
                        let n = (length * profile.sfreq).round() as usize;
                        for t in 0..n.min(n_samples.saturating_sub(t0)) {
                            let v = amplitude * (2.0 * PI * f * t as f64 / profile.sfreq + phase).sin();
                            for ch in 0..profile.n_channels {
                                data[[ch, t0 + t]] += v * spatial[ch];
                            }
                        }
                    }
                    Effect::LinearEmbeddingMix { amplitude, latency, width } => {
                        let k = match p.drive {
                            Drive::Concept(k) => k,
                            _ => 0,
                        };
                        let m = mixing.as_ref().expect("retrieval profiles build a mixing matrix");
                        let spatial = m.dot(&Array1::from(embeddings[k].clone())) * *amplitude;
                        let a = t0 + (latency * profile.sfreq).round() as usize;
                        let n = (width * profile.sfreq).round() as usize;
                        for t in 0..n.min(n_samples.saturating_sub(a)) {
                            let bump = 0.5 - 0.5 * (2.0 * PI * (t as f64 + 0.5) / n as f64).cos();
                            for ch in 0..profile.n_channels {
                                data[[ch, a + t]] += bump * spatial[ch];
                            }
                        }
                    }
                }
            }

            if profile.noise_std > 0.0 {
                let line = profile.line_noise * profile.noise_std;
                for ch in 0..profile.n_channels {
                    let phase = rng.gen::<f64>() * 2.0 * PI;
                    for t in 0..n_samples {
                        let hum = line * (2.0 * PI * 50.0 * t as f64 / profile.sfreq + phase).sin();
                        data[[ch, t]] += profile.noise_std * gaussian(&mut rng) + hum;
                    }
                }
            }

            let runs_per = profile.n_events.div_ceil(profile.n_runs);
            let events: Vec<Event> = plan
                .into_iter()
                .enumerate()
                .map(|(e, p)| {
                    let mut ev = Event::new(p.onset, profile.event_type.clone(), p.description);
                    ev.concept_id = p.concept;
                    if profile.n_runs > 1 {
                        ev = ev.with_run(format!("run-{:02}", e / runs_per + 1));
                    }
                    ev
                })
                .collect();
            let rec = Recording::new(
                format!("{subject}_{session}"),
                subject,
                session,
                profile.sfreq,
                channels.clone(),
                data.mapv(|v| v as f32),
                events,
            )?;
            out.push(rec);
        }
    }
    Ok(out)
}

fn base(name: &str, objective: ObjectiveKind, n_outputs: usize, effect: Effect, event_type: &str) -> SyntheticProfile {
    SyntheticProfile {
        name: name.to_string(),
        n_subjects: 10,
        n_sessions: 1,
        n_runs: 1,
        n_channels: 16,
        sfreq: 240.0,
        n_events: 60,
        objective,
        n_outputs,
        effect,
        noise_std: 1.0,
        line_noise: 0.5,
        event_type: event_type.to_string(),
        isi: 1.5,
        jitter: 0.2,
        n_concepts: 0,
        embedding_rank: 0,
        subject_level_label: false,
        rng_seed: 0,
    }
}

const EVOKED: Effect = Effect::EvokedDeflection { amplitude: 1.0, latency: 0.15, width: 0.2 };

/// Resolves `synthetic:<profile>[#variant]`; variants reseed the profile.
pub fn profile_by_name(source: &str) -> Result<SyntheticProfile, DataError> {
    let rest = source
        .strip_prefix("synthetic:")
        .ok_or_else(|| DataError::UnknownSource(source.to_string()))?;
    let (name, variant) = match rest.split_once('#') {
        Some((n, v)) => (n, v.parse::<u64>().map_err(|_| DataError::UnknownSource(source.to_string()))?),
        None => (rest, 0),
    };
    use ObjectiveKind::*;
    let mut p = match name {
        "evoked" => base(name, BinaryClassification, 2, EVOKED, "Stimulus"),
        "audiovisual" => SyntheticProfile { n_subjects: 6, ..base(name, MulticlassClassification, 4, EVOKED, "Stimulus") },
        "speech" => SyntheticProfile {
            n_subjects: 3,
            n_runs: 10,
            n_events: 80,
            isi: 1.2,
            ..base(name, BinaryClassification, 2, EVOKED, "Word")
        },
        "motor_imagery" => SyntheticProfile {
            n_subjects: 8,
            n_events: 40,
            isi: 3.0,
            ..base(
                name,
                MulticlassClassification,
                4,
                Effect::FrequencyTag { freqs: vec![10.0], amplitude: 1.0, length: 2.0, class_patterns: true },
                "Cue",
            )
        },
        "ssvep" => SyntheticProfile {
            n_subjects: 4,
            n_sessions: 3,
            n_events: 40,
            isi: 2.5,
            ..base(
                name,
                MulticlassClassification,
                4,
                Effect::FrequencyTag { freqs: vec![8.0, 11.0, 14.0, 17.0], amplitude: 0.5, length: 2.0, class_patterns: false },
                "Flicker",
            )
        },
        "dementia" => SyntheticProfile {
            n_subjects: 15,
            n_events: 30,
            isi: 2.0,
            jitter: 0.0,
            subject_level_label: true,
            ..base(
                name,
                MulticlassClassification,
                3,
                Effect::FrequencyTag { freqs: vec![10.0, 8.0, 6.0], amplitude: 1.0, length: 2.0, class_patterns: false },
                "Segment",
            )
        },
        "artifact" => SyntheticProfile { isi: 1.2, ..base(name, MultilabelClassification, 5, EVOKED, "Segment") },
        "reaction_time" => base(name, Regression, 1, EVOKED, "Stimulus"),
        "retrieval" => SyntheticProfile {
            n_subjects: 2,
            n_events: 500,
            n_concepts: 500,
            embedding_rank: 8,
            isi: 0.8,
            jitter: 0.1,
            ..base(
                name,
                Retrieval,
                32,
                Effect::LinearEmbeddingMix { amplitude: 1.0, latency: 0.1, width: 0.3 },
                "Image",
            )
        },
        "image" => SyntheticProfile {
            n_subjects: 1,
            n_events: 200,
            n_concepts: 200,
            embedding_rank: 8,
            isi: 0.8,
            jitter: 0.1,
            ..base(
                name,
                Retrieval,
                1536,
                Effect::LinearEmbeddingMix { amplitude: 1.0, latency: 0.1, width: 0.3 },
                "Image",
            )
        },
        _ => return Err(DataError::UnknownSource(source.to_string())),
    };
    p.rng_seed = variant;
    if variant > 0 {
        p.name = format!("{name}#{variant}");
    }
    Ok(p)
}

pub const PROFILE_NAMES: [&str; 10] = [
    "evoked",
    "audiovisual",
    "speech",
    "motor_imagery",
    "ssvep",
    "dementia",
    "artifact",
    "reaction_time",
    "retrieval",
    "image",
];

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(effect: Effect, objective: ObjectiveKind, n_outputs: usize) -> SyntheticProfile {
        SyntheticProfile {
            n_subjects: 2,
            n_events: 6,
            noise_std: 0.0,
            ..base("tiny", objective, n_outputs, effect, "Stimulus")
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let p = profile_by_name("synthetic:evoked").unwrap();
        let p = SyntheticProfile { n_subjects: 2, ..p };
        assert_eq!(generate_synthetic(&p).unwrap(), generate_synthetic(&p).unwrap());
        let other = SyntheticProfile { rng_seed: 1, ..p.clone() };
        assert_ne!(generate_synthetic(&p).unwrap()[0].data, generate_synthetic(&other).unwrap()[0].data);
    }

    #[test]
    fn noiseless_evoked_mean_equals_amplitude() {
        let amplitude = 2.5;
        let p = tiny(Effect::EvokedDeflection { amplitude, latency: 0.1, width: 0.2 }, ObjectiveKind::BinaryClassification, 2);
        let recs = generate_synthetic(&p).unwrap();
        let patterns = class_patterns(&p, 2);
        for rec in &recs {
            for ev in &rec.events {
                let c: usize = ev.description.trim_start_matches("class_").parse().unwrap();
                let peak = (0..p.n_channels).find(|&ch| patterns[c][ch].abs() == 1.0).unwrap();
                let sign = patterns[c][peak];
                let a = (ev.onset * p.sfreq).round() as usize + (0.1 * p.sfreq).round() as usize;
                let n = (0.2 * p.sfreq).round() as usize;
                let mean: f64 = (a..a + n).map(|t| f64::from(rec.data[[peak, t]])).sum::<f64>() / n as f64;
                assert_eq!(mean * sign, amplitude);
            }
        }
    }

    #[test]
    fn profiles_resolve_and_validate() {
        for name in PROFILE_NAMES {
            let p = profile_by_name(&format!("synthetic:{name}")).unwrap();
            p.validate().unwrap();
        }
        assert_eq!(profile_by_name("synthetic:ssvep#3").unwrap().rng_seed, 3);
        assert!(profile_by_name("synthetic:nope").is_err());
        assert!(profile_by_name("evoked").is_err());
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let mut p = tiny(EVOKED, ObjectiveKind::BinaryClassification, 2);
        p.n_channels = 0;
        assert!(p.validate().is_err());
        let p = tiny(
            Effect::FrequencyTag { freqs: vec![130.0], amplitude: 1.0, length: 1.0, class_patterns: false },
            ObjectiveKind::BinaryClassification,
            2,
        );
        assert!(p.validate().is_err());
    }

    #[test]
    fn runs_are_tagged() {
        let p = profile_by_name("synthetic:speech").unwrap();
        let recs = generate_synthetic(&SyntheticProfile { n_subjects: 1, ..p }).unwrap();
        let runs: std::collections::BTreeSet<_> = recs[0].events.iter().map(|e| e.run_id.clone().unwrap()).collect();
        assert_eq!(runs.len(), 10);
    }
}
