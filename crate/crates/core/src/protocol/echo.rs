//! A runner that echoes the dummy baseline, plus misbehaving variants for conformance tests.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::{Capabilities, DataManifest, Phase, Predictions, Preprocessing, Progress, ProtocolError, RunnerModel, TaskOffer};
use crate::baseline::dummy_fit_predict;
use crate::data::read_cache;
use crate::domain::{ObjectiveKind, SplitLabel, Target};
use crate::split::SplitManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EchoMode {
    Dummy,
    /// Drops the last prediction.
    Short,
    /// Sends a non-finite value for the first example.
    Nan,
    /// Exits the process during training.
    Crash,
    /// Never answers.
    Silent,
    /// Speaks protocol version 2.
    V2,
    /// Declines anything that is not single-label classification.
    ClassificationOnly,
}

impl FromStr for EchoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "dummy" => EchoMode::Dummy,
            "short" => EchoMode::Short,
            "nan" => EchoMode::Nan,
            "crash" => EchoMode::Crash,
            "silent" => EchoMode::Silent,
            "v2" => EchoMode::V2,
            "classification-only" => EchoMode::ClassificationOnly,
            other => return Err(format!("unknown mode {other:?}")),
        })
    }
}

struct Loaded {
    ids: BTreeMap<String, usize>,
    targets: Vec<Target>,
    manifest: SplitManifest,
}

pub struct EchoRunner {
    pub mode: EchoMode,
    pub deviations: BTreeMap<String, serde_json::Value>,
    offer: Option<TaskOffer>,
    data: Option<Loaded>,
    fit: Vec<Target>,
}

impl EchoRunner {
    pub fn new(mode: EchoMode) -> EchoRunner {
        EchoRunner { mode, deviations: BTreeMap::new(), offer: None, data: None, fit: Vec::new() }
    }

    fn targets_of(&self, label: SplitLabel) -> Result<Vec<Target>, String> {
        let data = self.data.as_ref().ok_or("no data manifest received")?;
        data.manifest
            .ids_of(label)
            .into_iter()
            .map(|id| data.ids.get(id).map(|&i| data.targets[i].clone()).ok_or(format!("example {id} not in cache")))
            .collect()
    }
}

impl RunnerModel for EchoRunner {
    fn capabilities(&self) -> Capabilities {
        let objectives = if self.mode == EchoMode::ClassificationOnly {
            vec![ObjectiveKind::BinaryClassification, ObjectiveKind::MulticlassClassification]
        } else {
            vec![
                ObjectiveKind::BinaryClassification,
                ObjectiveKind::MulticlassClassification,
                ObjectiveKind::MultilabelClassification,
                ObjectiveKind::Regression,
                ObjectiveKind::Retrieval,
            ]
        };
        Capabilities {
            runner: format!("echo-{:?}", self.mode).to_lowercase(),
            objectives,
            max_embedding_dim: None,
            preprocessing: Preprocessing::Engine,
        }
    }

    fn offer(&mut self, offer: &TaskOffer) -> Result<(), String> {
        if !self.capabilities().objectives.contains(&offer.task.objective) {
            return Err(format!("objective {} is not supported by this runner", offer.task.objective));
        }
        self.offer = Some(offer.clone());
        self.data = None;
        self.fit.clear();
        Ok(())
    }

    fn load(&mut self, m: &DataManifest) -> Result<(), String> {
        let es = read_cache(&m.cache_path).map_err(|e| e.to_string())?;
        let manifest = SplitManifest::load(&m.split_manifest_path).map_err(|e| e.to_string())?;
        if manifest.split_hash != m.split_hash {
            return Err(format!("split hash {:016x} != offered {:016x}", manifest.split_hash, m.split_hash));
        }
        let ids = es.example_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        self.data = Some(Loaded { ids, targets: es.targets, manifest });
        Ok(())
    }

    fn train(
        &mut self,
        progress: &mut dyn FnMut(Progress) -> Result<(), ProtocolError>,
    ) -> Result<BTreeMap<String, serde_json::Value>, String> {
        if self.mode == EchoMode::Crash {
            std::process::exit(70);
        }
        // Same fit set and order as the engine's dummy: train, then valid.
        let mut fit = self.targets_of(SplitLabel::Train)?;
        fit.extend(self.targets_of(SplitLabel::Valid)?);
        progress(Progress { epoch: Some(1), ..Progress::phase(Phase::Training) }).map_err(|e| e.to_string())?;
        self.fit = fit;
        Ok(self.deviations.clone())
    }

    fn predict(&mut self, split: SplitLabel) -> Result<Predictions, String> {
        let offer = self.offer.as_ref().ok_or("no task offered")?;
        if self.fit.is_empty() {
            return Err("predict before train".into());
        }
        let data = self.data.as_ref().ok_or("no data manifest received")?;
        let ids: Vec<String> = data.manifest.ids_of(split).into_iter().map(str::to_string).collect();
        let preds = dummy_fit_predict(&self.fit, offer.task.objective, offer.n_outputs, ids.len(), offer.seed)
            .map_err(|e| e.to_string())?;
        let mut values: Vec<Vec<Option<f64>>> =
            preds.iter().map(|p| p.values().into_iter().map(Some).collect()).collect();
        let mut example_ids = ids;
        match self.mode {
            EchoMode::Short => {
                values.pop();
                example_ids.pop();
            }
            EchoMode::Nan => {
                if let Some(v) = values.first_mut().and_then(|r| r.first_mut()) {
                    *v = None;
                }
            }
            _ => {}
        }
        Ok(Predictions { split, example_ids, values })
    }
}
