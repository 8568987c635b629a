use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Example, HyperParams, SearchSpace};
use crate::codebook::RELEVANT;
use crate::labeling::PostScorer;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("training failed: {0}")]
    Training(String),
    #[error("inference failed: {0}")]
    Inference(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
}

/// A fitted classifier.
pub trait ClassifierModel: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Output order of every probability vector.
    fn classes(&self) -> &[String];

    /// One probability vector per text, nonnegative and summing to one.
    /// Deterministic for a fixed model.
    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError>;

    /// Serialized artifact, loadable by the owning backend.
    fn to_bytes(&self) -> Result<Vec<u8>, BackendError>;

    /// Content hash of the serialized artifact.
    fn fingerprint(&self) -> String {
        match self.to_bytes() {
            Ok(bytes) => hex::encode(Sha256::digest(bytes)),
            Err(_) => String::from("unavailable"),
        }
    }
}

/// Something that fits classifiers from labeled text.
pub trait ClassifierBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Hyperparameter ranges suited to this backend.
    fn default_space(&self) -> SearchSpace;

    fn fit(&self, train: &[Example], classes: &[String], hp: &HyperParams) -> Result<Box<dyn ClassifierModel>, BackendError>;

    fn load(&self, bytes: &[u8]) -> Result<Box<dyn ClassifierModel>, BackendError>;
}

/// Backends by id.
#[derive(Clone, Default)]
pub struct BackendRegistry {
    backends: BTreeMap<String, Arc<dyn ClassifierBackend>>,
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// A registry holding the hashed n-gram baseline.
    pub fn with_baseline() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(super::baseline::HashedNgramBackend::default()));
        r
    }

    pub fn register(&mut self, backend: Arc<dyn ClassifierBackend>) {
        self.backends.insert(backend.id().to_string(), backend);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn ClassifierBackend>, BackendError> {
        self.backends
            .get(id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownBackend(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }
}

/// Probability of one class, used as a score.
pub struct ClassScorer {
    model: Arc<dyn ClassifierModel>,
    index: usize,
}

impl ClassScorer {
    pub fn new(model: Arc<dyn ClassifierModel>, class: &str) -> Result<Self, BackendError> {
        let index = model
            .classes()
            .iter()
            .position(|c| c == class)
            .ok_or_else(|| BackendError::Inference(format!("model has no class {class:?}")))?;
        Ok(Self { model, index })
    }

    /// Scores P(relevant).
    pub fn relevance(model: Arc<dyn ClassifierModel>) -> Result<Self, BackendError> {
        Self::new(model, RELEVANT)
    }

    pub fn scores(&self, texts: &[&str]) -> Result<Vec<f64>, BackendError> {
        Ok(self.model.predict_proba(texts)?.into_iter().map(|p| p[self.index]).collect())
    }
}

impl PostScorer for ClassScorer {
    fn score(&self, texts: &[&str]) -> Result<Vec<f64>, String> {
        self.scores(texts).map_err(|e| e.to_string())
    }
}

/// Checks the probability-vector contract: one vector per text, width equal
/// to the class count, nonnegative entries summing to 1 within 1e-6.
pub fn check_probabilities(probs: &[Vec<f64>], n: usize, classes: usize) -> Result<(), BackendError> {
    if probs.len() != n {
        return Err(BackendError::Inference(format!("{} vectors for {n} texts", probs.len())));
    }
    for p in probs {
        let sum: f64 = p.iter().sum();
        if p.len() != classes || p.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(BackendError::Inference(format!("invalid probability vector {p:?}")));
        }
    }
    Ok(())
}
