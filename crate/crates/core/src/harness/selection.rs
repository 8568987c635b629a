use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{check_probabilities, BackendError, BackendRegistry, ClassifierBackend, ClassifierModel};
use super::{oversample, sample_hyperparams, DatasetSplit, Example, HarnessError, HyperParams, SearchSpace, Task};
use crate::codebook::RELEVANT;
use crate::metrics::{evaluate_predictions, threshold_at_zero_fpr, EvalReport, MetricError, OperatingPoint};
use crate::time::iso_seconds;

/// Source of run timestamps. `Fixed` makes run metadata byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => DateTime::from_timestamp(Utc::now().timestamp(), 0).expect("valid now"),
            Clock::Fixed(t) => *t,
        }
    }
}

/// Metadata of one hyperparameter run, as appended to the run registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: Task,
    pub backend: String,
    pub run_index: usize,
    pub search_seed: u64,
    pub hp: HyperParams,
    pub train_size: usize,
    pub validation_accuracy: f64,
    #[serde(with = "iso_seconds")]
    pub started_at: DateTime<Utc>,
    #[serde(with = "iso_seconds")]
    pub finished_at: DateTime<Utc>,
}

pub struct Candidate {
    pub run_index: usize,
    pub model: Box<dyn ClassifierModel>,
    pub validation_accuracy: f64,
    pub record: RunRecord,
}

impl std::fmt::Debug for Candidate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Candidate")
            .field("run_index", &self.run_index)
            .field("validation_accuracy", &self.validation_accuracy)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub task: Task,
    pub runs: usize,
    /// `None` uses the backend's default space.
    pub space: Option<SearchSpace>,
    pub seed: u64,
    /// `None` uses the task default.
    pub oversample: Option<bool>,
    pub clock: Clock,
    pub parallel: bool,
}

impl SearchConfig {
    pub fn for_task(task: Task, seed: u64) -> Self {
        Self {
            task,
            runs: task.default_runs(),
            space: None,
            seed,
            oversample: None,
            clock: Clock::System,
            parallel: true,
        }
    }
}

const PREDICT_CHUNK: usize = 512;

fn predict_all(model: &dyn ClassifierModel, items: &[Example]) -> Result<Vec<Vec<f64>>, HarnessError> {
    let mut out = Vec::with_capacity(items.len());
    for chunk in items.chunks(PREDICT_CHUNK) {
        let texts: Vec<&str> = chunk.iter().map(|e| e.text.as_str()).collect();
        let probs = model.predict_proba(&texts)?;
        check_probabilities(&probs, texts.len(), model.classes().len())?;
        out.extend(probs);
    }
    Ok(out)
}

fn accuracy(model: &dyn ClassifierModel, items: &[Example]) -> Result<f64, HarnessError> {
    if items.is_empty() {
        return Err(MetricError::EmptyTest.into());
    }
    let probs = predict_all(model, items)?;
    let correct = probs
        .iter()
        .zip(items)
        .filter(|(p, e)| model.classes()[crate::metrics::argmax(p)] == e.label)
        .count();
    Ok(correct as f64 / items.len() as f64)
}

/// Fits one model on the training part (oversampled if requested) and
/// scores it on the validation part.
#[allow(clippy::too_many_arguments)]
pub fn train_run(
    backend: &dyn ClassifierBackend,
    split: &DatasetSplit,
    task: Task,
    classes: &[String],
    hp: &HyperParams,
    balance: bool,
    run_index: usize,
    search_seed: u64,
    clock: Clock,
) -> Result<Candidate, HarnessError> {
    if split.train.is_empty() {
        return Err(HarnessError::EmptyTrainingSet);
    }
    hp.validate()?;
    let started_at = clock.now();
    let train = if balance {
        oversample(&split.train, &mut ChaCha8Rng::seed_from_u64(hp.seed))?
    } else {
        split.train.clone()
    };
    let hp_text = || serde_json::to_string(hp).unwrap_or_default();
    let model = backend.fit(&train, classes, hp).map_err(|source| HarnessError::Backend {
        hp: hp_text(),
        source,
    })?;
    let validation_accuracy = accuracy(model.as_ref(), &split.validation).map_err(|e| match e {
        HarnessError::Model(source) => HarnessError::Backend { hp: hp_text(), source },
        other => other,
    })?;
    let record = RunRecord {
        task,
        backend: backend.id().to_string(),
        run_index,
        search_seed,
        hp: hp.clone(),
        train_size: train.len(),
        validation_accuracy,
        started_at,
        finished_at: clock.now(),
    };
    Ok(Candidate {
        run_index,
        model,
        validation_accuracy,
        record,
    })
}

/// The run with the highest validation accuracy; ties go to the lowest run
/// index.
pub fn select_best(mut runs: Vec<Candidate>) -> Result<Candidate, HarnessError> {
    runs.sort_by_key(|c| c.run_index);
    let mut best: Option<Candidate> = None;
    for run in runs {
        match &best {
            Some(b) if run.validation_accuracy <= b.validation_accuracy => {}
            _ => best = Some(run),
        }
    }
    best.ok_or(HarnessError::NoRuns)
}

/// Full report of `model` on held-out examples.
pub fn evaluate(model: &dyn ClassifierModel, test: &[Example]) -> Result<EvalReport, HarnessError> {
    if test.is_empty() {
        return Err(MetricError::EmptyTest.into());
    }
    if let Some(e) = test.iter().find(|e| !model.classes().contains(&e.label)) {
        return Err(MetricError::UnknownLabel(e.label.clone()).into());
    }
    let probs = predict_all(model, test)?;
    let labels: Vec<String> = test.iter().map(|e| e.label.clone()).collect();
    Ok(evaluate_predictions(model.classes(), &probs, &labels)?)
}

/// A selected model with its test report. Only relevance classifiers carry a
/// decision threshold.
#[derive(Clone)]
pub struct TrainedClassifier {
    pub backend_id: String,
    pub task: Task,
    pub model: Arc<dyn ClassifierModel>,
    pub hp: HyperParams,
    pub run_index: usize,
    pub validation_accuracy: f64,
    pub report: EvalReport,
    decision: Option<OperatingPoint>,
}

impl TrainedClassifier {
    pub fn new(
        candidate: Candidate,
        task: Task,
        report: EvalReport,
        decision: Option<OperatingPoint>,
    ) -> Result<Self, HarnessError> {
        if decision.is_some() != (task == Task::Relevance) {
            return Err(HarnessError::Card("a decision threshold belongs to the relevance task only".into()));
        }
        Ok(Self {
            backend_id: candidate.record.backend.clone(),
            task,
            model: Arc::from(candidate.model),
            hp: candidate.record.hp.clone(),
            run_index: candidate.run_index,
            validation_accuracy: candidate.validation_accuracy,
            report,
            decision,
        })
    }

    pub fn decision_threshold(&self) -> Option<f64> {
        self.decision.map(|d| d.threshold)
    }

    /// True positive rate of the threshold on the validation split.
    pub fn threshold_validation_tpr(&self) -> Option<f64> {
        self.decision.map(|d| d.tpr)
    }
}

pub struct SearchOutcome {
    pub classifier: TrainedClassifier,
    pub runs: Vec<RunRecord>,
}

/// Random hyperparameter search: `config.runs` sampled configurations, the
/// best by validation accuracy evaluated once on the test part. For the
/// relevance task the zero-false-positive threshold is picked on the
/// validation part.
pub fn random_search(
    backend: &dyn ClassifierBackend,
    split: &DatasetSplit,
    classes: &[String],
    config: &SearchConfig,
) -> Result<SearchOutcome, HarnessError> {
    if config.runs == 0 {
        return Err(HarnessError::NoRuns);
    }
    let space = config.space.clone().unwrap_or_else(|| backend.default_space());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let hps: Vec<HyperParams> = (0..config.runs)
        .map(|_| sample_hyperparams(&space, &mut rng))
        .collect::<Result<_, _>>()?;
    let balance = config.oversample.unwrap_or(config.task.default_oversample());
    let run = |(i, hp): (usize, &HyperParams)| {
        train_run(backend, split, config.task, classes, hp, balance, i, config.seed, config.clock)
    };
    let candidates: Vec<Candidate> = if config.parallel {
        run_parallel(&hps, &run)?
    } else {
        hps.iter().enumerate().map(run).collect::<Result<_, _>>()?
    };
    let runs: Vec<RunRecord> = candidates.iter().map(|c| c.record.clone()).collect();
    let best = select_best(candidates)?;
    let report = evaluate(best.model.as_ref(), &split.test)?;
    let decision = if config.task == Task::Relevance {
        let index = best
            .model
            .classes()
            .iter()
            .position(|c| c == RELEVANT)
            .ok_or_else(|| BackendError::Inference(format!("model has no class {RELEVANT:?}")))?;
        let scored: Vec<(f64, bool)> = predict_all(best.model.as_ref(), &split.validation)?
            .into_iter()
            .zip(&split.validation)
            .map(|(p, e)| (p[index], e.label == RELEVANT))
            .collect();
        Some(threshold_at_zero_fpr(&scored)?)
    } else {
        None
    };
    Ok(SearchOutcome {
        classifier: TrainedClassifier::new(best, config.task, report, decision)?,
        runs,
    })
}

#[cfg(feature = "parallel")]
fn run_parallel<F>(hps: &[HyperParams], run: &F) -> Result<Vec<Candidate>, HarnessError>
where
    F: Fn((usize, &HyperParams)) -> Result<Candidate, HarnessError> + Sync,
{
    use rayon::prelude::*;
    hps.par_iter().enumerate().map(run).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_parallel<F>(hps: &[HyperParams], run: &F) -> Result<Vec<Candidate>, HarnessError>
where
    F: Fn((usize, &HyperParams)) -> Result<Candidate, HarnessError>,
{
    hps.iter().enumerate().map(run).collect()
}

/// Append-only line-delimited log of run records.
#[derive(Debug)]
pub struct RunRegistry {
    path: PathBuf,
    lock: Mutex<()>,
}

impl RunRegistry {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    /// Appends all records with a single write.
    pub fn append(&self, records: &[RunRecord]) -> Result<(), HarnessError> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("run record serializes"));
            buf.push('\n');
        }
        let _guard = self.lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read(&self) -> Result<Vec<RunRecord>, HarnessError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&self.path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::Card(e.to_string())))
            .collect()
    }
}

mod opt_extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    struct Wrap(#[serde(with = "crate::metrics::extended_f64")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => crate::metrics::extended_f64::serialize(x, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// Everything needed to reload and audit a selected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub task: Task,
    pub backend: String,
    pub classes: Vec<String>,
    pub hp: HyperParams,
    pub run_index: usize,
    pub validation_accuracy: f64,
    pub report: EvalReport,
    #[serde(default, with = "opt_extended_f64")]
    pub decision_threshold: Option<f64>,
    #[serde(default)]
    pub threshold_validation_tpr: Option<f64>,
    pub codebook_version: String,
    pub dataset_fingerprint: String,
    /// Path of the model artifact, relative to the card's directory.
    pub model_file: String,
    pub model_fingerprint: String,
}

pub const CARD_FILE: &str = "card.json";
pub const MODEL_FILE: &str = "model.bin";

impl ModelCard {
    /// Writes `model.bin` and `card.json` into `dir`. Returns the card and
    /// its path.
    pub fn write(
        classifier: &TrainedClassifier,
        dir: &Path,
        codebook_version: &str,
        dataset_fingerprint: &str,
    ) -> Result<(ModelCard, PathBuf), HarnessError> {
        fs::create_dir_all(dir)?;
        let bytes = classifier.model.to_bytes()?;
        fs::write(dir.join(MODEL_FILE), &bytes)?;
        let card = ModelCard {
            task: classifier.task,
            backend: classifier.backend_id.clone(),
            classes: classifier.model.classes().to_vec(),
            hp: classifier.hp.clone(),
            run_index: classifier.run_index,
            validation_accuracy: classifier.validation_accuracy,
            report: classifier.report.clone(),
            decision_threshold: classifier.decision_threshold(),
            threshold_validation_tpr: classifier.threshold_validation_tpr(),
            codebook_version: codebook_version.to_string(),
            dataset_fingerprint: dataset_fingerprint.to_string(),
            model_file: MODEL_FILE.to_string(),
            model_fingerprint: hex::encode(Sha256::digest(&bytes)),
        };
        let path = dir.join(CARD_FILE);
        fs::write(&path, serde_json::to_string_pretty(&card).expect("card serializes"))?;
        Ok((card, path))
    }

    pub fn load(path: &Path) -> Result<ModelCard, HarnessError> {
        let card: ModelCard =
            serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| HarnessError::Card(format!("{}: {e}", path.display())))?;
        if card.decision_threshold.is_some() != (card.task == Task::Relevance) {
            return Err(HarnessError::Card("decision threshold present iff task is relevance".into()));
        }
        Ok(card)
    }

    /// Loads the model artifact next to the card at `card_path`, checking
    /// its content hash.
    pub fn load_model(&self, card_path: &Path, registry: &BackendRegistry) -> Result<Arc<dyn ClassifierModel>, HarnessError> {
        let dir = card_path.parent().unwrap_or(Path::new("."));
        let bytes = fs::read(dir.join(&self.model_file))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        if digest != self.model_fingerprint {
            return Err(HarnessError::Card(format!(
                "model fingerprint mismatch: card {} file {digest}",
                self.model_fingerprint
            )));
        }
        let model = registry.get(&self.backend)?.load(&bytes)?;
        if model.classes() != self.classes.as_slice() {
            return Err(HarnessError::Card("model classes differ from card".into()));
        }
        Ok(Arc::from(model))
    }
}
