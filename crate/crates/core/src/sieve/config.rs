use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{default_target_topics, Pipeline, SieveError, StageModel, DEFAULT_BATCH_SIZE};
use crate::codebook::Codebook;
use crate::harness::{BackendRegistry, ClassifierModel, ModelCard, Task};

/// A model card by path and SHA-256 of the card file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelRef {
    pub card: PathBuf,
    pub sha256: String,
}

impl ModelRef {
    /// References the card at `path` with its current content hash.
    pub fn for_card(path: &Path) -> Result<Self, SieveError> {
        Ok(Self {
            card: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(fs::read(path)?)),
        })
    }

    /// Verifies the card hash and loads the card and its model.
    pub fn load(&self, registry: &BackendRegistry) -> Result<(ModelCard, Arc<dyn ClassifierModel>), SieveError> {
        let bytes = fs::read(&self.card)?;
        let actual = hex::encode(Sha256::digest(&bytes));
        if !actual.eq_ignore_ascii_case(&self.sha256) {
            return Err(SieveError::HashMismatch {
                path: self.card.display().to_string(),
                expected: self.sha256.clone(),
                actual,
            });
        }
        let card = ModelCard::load(&self.card)?;
        let model = card.load_model(&self.card, registry)?;
        Ok((card, model))
    }

    fn open(&self, task: Task, registry: &BackendRegistry) -> Result<(ModelCard, StageModel), SieveError> {
        let (card, model) = self.load(registry)?;
        if card.task != task {
            return Err(SieveError::WrongTask {
                expected: task.to_string(),
                got: card.task,
            });
        }
        let stage = StageModel::new(task, model, card.codebook_version.clone());
        Ok((card, stage))
    }
}

fn default_batch_size() -> usize {
    DEFAULT_BATCH_SIZE
}

/// Pipeline configuration file.
///
/// ```toml
/// target_topics = ["curfew"]
/// batch_size = 256
/// checkpoint = "sieve.checkpoint"
///
/// [relevance]
/// card = "models/relevance/card.json"
/// sha256 = "…"
///
/// [topic]
/// card = "models/topic/card.json"
/// sha256 = "…"
///
/// [support.measure_support]
/// card = "models/measure_support/card.json"
/// sha256 = "…"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub relevance: ModelRef,
    /// Must equal the threshold on the relevance card when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub topic: ModelRef,
    #[serde(default)]
    pub support: BTreeMap<Task, ModelRef>,
    #[serde(default = "default_target_topics")]
    pub target_topics: BTreeSet<String>,
    #[serde(default)]
    pub support_on_all_relevant: bool,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(src: &str) -> Result<Self, SieveError> {
        toml::from_str(src).map_err(|e| SieveError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, SieveError> {
        let mut config = Self::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.relevance.card);
        resolve(&mut config.topic.card);
        config.support.values_mut().for_each(|r| resolve(&mut r.card));
        if let Some(c) = config.checkpoint.as_mut() {
            resolve(c);
        }
        Ok(config)
    }

    /// Loads every referenced model after checking card hashes, stage
    /// tasks and codebook versions.
    pub fn build(&self, registry: &BackendRegistry, codebook: &Codebook) -> Result<Pipeline, SieveError> {
        let (relevance_card, relevance) = self.relevance.open(Task::Relevance, registry)?;
        let card_threshold = relevance_card
            .decision_threshold
            .ok_or_else(|| SieveError::Config("relevance card has no decision threshold".into()))?;
        if let Some(t) = self.threshold {
            if t != card_threshold {
                return Err(SieveError::Config(format!(
                    "threshold {t} differs from the relevance card's {card_threshold}"
                )));
            }
        }
        let (_, topic) = self.topic.open(Task::Topic, registry)?;
        let mut measure_support = None;
        let mut government_support = None;
        for (task, r) in &self.support {
            let (_, stage) = r.open(*task, registry)?;
            match task {
                Task::MeasureSupport => measure_support = Some(stage),
                Task::GovernmentSupport => government_support = Some(stage),
                other => {
                    return Err(SieveError::Config(format!("{other} is not a support task")));
                }
            }
        }
        let pipeline = Pipeline {
            codebook_version: codebook.version.clone(),
            relevance,
            threshold: card_threshold,
            topic,
            measure_support,
            government_support,
            target_topics: self.target_topics.clone(),
            support_on_all_relevant: self.support_on_all_relevant,
            batch_size: self.batch_size,
        };
        pipeline.check(codebook)?;
        Ok(pipeline)
    }
}
