//! Event-locked windowing and target encoding.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{s, Array3};

use super::DataError;
use crate::config::{EmbeddingSource, EventField, TargetCodec, TaskSpec};
use crate::domain::{Event, ExampleSet, ObjectiveKind, Recording, Target};

/// Turns events into [`Target`]s for one task.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetEncoder {
    Classes { field: EventField, classes: Vec<String> },
    Labels { field: EventField, labels: Vec<String>, separator: String },
    Scalar { field: EventField },
    Embedding { field: EventField, table: BTreeMap<String, Vec<f64>>, dim: usize },
}

fn field_value(ev: &Event, field: EventField) -> Option<&str> {
    match field {
        EventField::Description => Some(ev.description.as_str()),
        EventField::EventType => Some(ev.event_type.as_str()),
        EventField::ConceptId => ev.concept_id.as_deref(),
    }
}

fn split_labels<'a>(value: &'a str, separator: &str) -> impl Iterator<Item = &'a str> + 'a {
    let sep = separator.to_string();
    value
        .split(move |c: char| sep.contains(c))
        .map(str::trim)
        .filter(|t| !t.is_empty() && *t != "none")
}

/// Reads `{"dim": D, "vectors": {"<id>": [..]}}`.
pub fn load_embedding_file(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, DataError> {
    #[derive(serde::Deserialize)]
    struct File {
        dim: usize,
        vectors: BTreeMap<String, Vec<f64>>,
    }
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let f: File = serde_json::from_slice(&bytes).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
    if let Some((k, v)) = f.vectors.iter().find(|(_, v)| v.len() != f.dim) {
        return Err(DataError::Format(format!("embedding `{k}` has {} values, expected {}", v.len(), f.dim)));
    }
    Ok(f.vectors)
}

impl TargetEncoder {
    /// Builds the encoder; classes not listed in the config are taken from the events (sorted).
    pub fn fit(
        spec: &TaskSpec,
        recordings: &[Recording],
        synthetic_table: Option<&BTreeMap<String, Vec<f64>>>,
    ) -> Result<TargetEncoder, DataError> {
        let trigger = &spec.trigger_event_type;
        let matching = || recordings.iter().flat_map(|r| r.events.iter()).filter(move |e| &e.event_type == trigger);
        let enc = match &spec.target {
            TargetCodec::LabelEncoder { event_types: _, event_field, classes, separator, .. } => {
                let multilabel = spec.objective == ObjectiveKind::MultilabelClassification;
                let names = match classes {
                    Some(c) => c.clone(),
                    None => {
                        let mut seen = BTreeSet::new();
                        for ev in matching() {
                            let v = field_value(ev, *event_field).unwrap_or("");
                            if multilabel {
                                seen.extend(split_labels(v, separator).map(str::to_string));
                            } else {
                                seen.insert(v.to_string());
                            }
                        }
                        seen.into_iter().collect()
                    }
                };
                if multilabel {
                    TargetEncoder::Labels { field: *event_field, labels: names, separator: separator.clone() }
                } else {
                    TargetEncoder::Classes { field: *event_field, classes: names }
                }
            }
            TargetCodec::Scalar { event_field } => TargetEncoder::Scalar { field: *event_field },
            TargetCodec::Embedding { event_field, embeddings } => {
                let table = match embeddings {
                    EmbeddingSource::Synthetic => synthetic_table
                        .cloned()
                        .ok_or_else(|| DataError::Format("synthetic embeddings need a synthetic source".into()))?,
                    EmbeddingSource::File(p) => load_embedding_file(p)?,
                };
                let dim = table.values().next().map_or(0, Vec::len);
                TargetEncoder::Embedding { field: *event_field, table, dim }
            }
        };
        let n = enc.n_outputs();
        match spec.n_outputs {
            Some(declared) if declared != n => {
                return Err(DataError::TargetDim { task: spec.task_id.clone(), declared, found: n });
            }
            None => log::warn!("{}: n_outputs not declared, using {n} from the label encoder", spec.task_id),
            _ => {}
        }
        Ok(enc)
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            TargetEncoder::Classes { classes, .. } => classes.len(),
            TargetEncoder::Labels { labels, .. } => labels.len(),
            TargetEncoder::Scalar { .. } => 1,
            TargetEncoder::Embedding { dim, .. } => *dim,
        }
    }

    pub fn encode(&self, ev: &Event) -> Result<Target, DataError> {
        let bad = |reason: String| DataError::Target { onset: ev.onset, reason };
        match self {
            TargetEncoder::Classes { field, classes } => {
                let v = field_value(ev, *field).ok_or_else(|| bad("missing field".into()))?;
                classes
                    .iter()
                    .position(|c| c == v)
                    .map(Target::ClassIndex)
                    .ok_or_else(|| bad(format!("unknown class `{v}`")))
            }
            TargetEncoder::Labels { field, labels, separator } => {
                let v = field_value(ev, *field).ok_or_else(|| bad("missing field".into()))?;
                let mut out = vec![false; labels.len()];
                for tok in split_labels(v, separator) {
                    let i = labels.iter().position(|l| l == tok).ok_or_else(|| bad(format!("unknown label `{tok}`")))?;
                    out[i] = true;
                }
                Ok(Target::LabelVector(out))
            }
            TargetEncoder::Scalar { field } => {
                let v = field_value(ev, *field).ok_or_else(|| bad("missing field".into()))?;
                let x: f64 = v.trim().parse().map_err(|_| bad(format!("`{v}` is not a number")))?;
                if !x.is_finite() {
                    return Err(bad(format!("`{v}` is not finite")));
                }
                Ok(Target::Scalar(x))
            }
            TargetEncoder::Embedding { field, table, .. } => {
                let v = field_value(ev, *field).ok_or_else(|| bad("missing concept id".into()))?;
                table
                    .get(v)
                    .map(|e| Target::Embedding(e.clone()))
                    .ok_or_else(|| bad(format!("no embedding for `{v}`")))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EpochStats {
    pub matched: usize,
    /// Matching events whose window fell outside the recording.
    pub dropped: usize,
}

/// One window per matching event; out-of-bounds windows are dropped and counted.
pub fn epoch(
    rec: &Recording,
    spec: &TaskSpec,
    encoder: &TargetEncoder,
) -> Result<(ExampleSet, EpochStats), DataError> {
    let n_times = (spec.duration * rec.sfreq).round() as usize;
    let offset = (spec.start * rec.sfreq).round() as i64;
    let mut stats = EpochStats::default();
    let mut keep: Vec<(usize, i64)> = Vec::new();
    for (i, ev) in rec.events.iter().enumerate() {
        if ev.event_type != spec.trigger_event_type {
            continue;
        }
        stats.matched += 1;
        let a = (ev.onset * rec.sfreq).round() as i64 + offset;
        if a < 0 || a as usize + n_times > rec.n_samples() {
            stats.dropped += 1;
            continue;
        }
        keep.push((i, a));
    }
    if stats.matched == 0 {
        return Err(DataError::NoEvents {
            recording: rec.recording_id.clone(),
            event_type: spec.trigger_event_type.clone(),
        });
    }
    if stats.dropped > 0 {
        log::info!("{}: dropped {} out-of-bounds windows", rec.recording_id, stats.dropped);
    }
    let mut windows = Array3::<f32>::zeros((keep.len(), rec.n_channels(), n_times));
    let mut es = ExampleSet::empty(rec.n_channels(), n_times, rec.sfreq, spec.start, spec.duration);
    for (k, &(i, a)) in keep.iter().enumerate() {
        let a = a as usize;
        windows.slice_mut(s![k, .., ..]).assign(&rec.data.slice(s![.., a..a + n_times]));
        let ev = &rec.events[i];
        es.targets.push(encoder.encode(ev)?);
        es.example_ids.push(format!("{}/{i:05}", rec.recording_id));
        es.subject_ids.push(rec.subject_id.clone());
        es.session_ids.push(rec.session_id.clone());
        es.run_ids.push(ev.run_id.clone().unwrap_or_default());
        es.concept_ids.push(ev.concept_id.clone());
        es.descriptions.push(ev.description.clone());
        es.split_labels.push(None);
    }
    es.windows = windows;
    Ok((es, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_task_config;
    use ndarray::Array2;

    fn spec() -> TaskSpec {
        parse_task_config(
            r#"
task_id: t
n_outputs: 2
data:
  study: {source.name: "synthetic:evoked", split: {name: Random}}
  target: {name: LabelEncoder, classes: [a, b]}
  trigger_event_type: Stimulus
  start: -0.2
  duration: 1.0
loss.name: CrossEntropyLoss
metrics: BalancedAcc
"#,
        )
        .unwrap()
    }

    fn rec(onsets: &[f64], shift: usize) -> Recording {
        let sfreq = 120.0;
        let n = 1200 + shift;
        let data = Array2::from_shape_fn((2, n), |(c, t)| {
            if t < shift {
                0.0
            } else {
                ((t - shift) as f32 * 0.01).sin() + c as f32
            }
        });
        let events = onsets
            .iter()
            .enumerate()
            .map(|(i, &o)| Event::new(o + shift as f64 / sfreq, "Stimulus", if i % 2 == 0 { "a" } else { "b" }))
            .collect();
        Recording::new("r", "s", "ses", sfreq, vec!["x".into(), "y".into()], data, events).unwrap()
    }

    #[test]
    fn five_events_give_five_windows() {
        let r = rec(&[1.0, 2.0, 3.0, 4.0, 5.0], 0);
        let enc = TargetEncoder::fit(&spec(), &[r.clone()], None).unwrap();
        let (es, stats) = epoch(&r, &spec(), &enc).unwrap();
        assert_eq!(es.len(), 5);
        assert_eq!(es.n_times(), 120);
        assert_eq!(stats, EpochStats { matched: 5, dropped: 0 });
        assert_eq!(es.targets[1], Target::ClassIndex(1));
    }

    #[test]
    fn early_event_is_dropped() {
        let r = rec(&[0.05, 2.0], 0);
        let enc = TargetEncoder::fit(&spec(), &[r.clone()], None).unwrap();
        let (es, stats) = epoch(&r, &spec(), &enc).unwrap();
        assert_eq!(es.len(), 1);
        assert_eq!(stats.dropped, 1);
    }

    #[test]
    fn no_matching_events_is_an_error() {
        let mut r = rec(&[1.0], 0);
        r.events[0].event_type = "Other".into();
        let enc = TargetEncoder::Classes { field: EventField::Description, classes: vec!["a".into()] };
        assert!(matches!(epoch(&r, &spec(), &enc), Err(DataError::NoEvents { .. })));
    }

    #[test]
    fn epochs_are_translation_consistent() {
        let onsets = [1.0, 2.5, 4.25];
        let a = rec(&onsets, 0);
        let b = rec(&onsets, 37);
        let enc = TargetEncoder::fit(&spec(), &[a.clone()], None).unwrap();
        let (ea, _) = epoch(&a, &spec(), &enc).unwrap();
        let (eb, _) = epoch(&b, &spec(), &enc).unwrap();
        assert_eq!(ea.windows, eb.windows);
    }

    #[test]
    fn declared_dimension_must_match() {
        let mut s = spec();
        s.target = TargetCodec::LabelEncoder {
            event_types: vec![],
            event_field: EventField::Description,
            return_one_hot: true,
            classes: None,
            separator: "+".into(),
        };
        s.n_outputs = Some(3);
        let r = rec(&[1.0, 2.0], 0);
        assert!(matches!(TargetEncoder::fit(&s, &[r], None), Err(DataError::TargetDim { .. })));
    }

    #[test]
    fn multilabel_descriptions_split() {
        let enc = TargetEncoder::Labels {
            field: EventField::Description,
            labels: vec!["x".into(), "y".into(), "z".into()],
            separator: "+".into(),
        };
        assert_eq!(enc.encode(&Event::new(0.0, "S", "x+z")).unwrap(), Target::LabelVector(vec![true, false, true]));
        assert_eq!(enc.encode(&Event::new(0.0, "S", "none")).unwrap(), Target::LabelVector(vec![false; 3]));
        assert!(enc.encode(&Event::new(0.0, "S", "w")).is_err());
    }
}
