//! Training, model selection and evaluation for the four classification
//! tasks, over pluggable classifier backends.

pub mod backend;
pub mod baseline;
mod oversample;
mod search;
mod selection;
mod split;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{check_probabilities, BackendError, BackendRegistry, ClassScorer, ClassifierBackend, ClassifierModel};
pub use oversample::oversample;
pub use search::{sample_hyperparams, Domain, HyperParams, ParamValue, SearchSpace};
pub use selection::{
    evaluate, random_search, select_best, train_run, Candidate, Clock, ModelCard, RunRecord, RunRegistry, SearchConfig,
    SearchOutcome, TrainedClassifier,
};
pub use split::{split_dataset, DatasetSplit, SplitSizes};

use crate::codebook::{Axis, Codebook, RELEVANT};
use crate::ingest::Post;
use crate::labeling::GoldLabel;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("pool too small: {required} items required, {available} available")]
    PoolTooSmall { required: usize, available: usize },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("empty domain for {0}")]
    EmptyDomain(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("no runs to select from")]
    NoRuns,
    #[error("backend failed with hyperparameters {hp}: {source}")]
    Backend {
        hp: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Model(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model card: {0}")]
    Card(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The four classifiers of the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Relevance,
    Topic,
    MeasureSupport,
    GovernmentSupport,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Relevance, Task::Topic, Task::MeasureSupport, Task::GovernmentSupport];

    pub fn axis(self) -> Axis {
        match self {
            Task::Relevance => Axis::Relevance,
            Task::Topic => Axis::Topic,
            Task::MeasureSupport => Axis::MeasureSupport,
            Task::GovernmentSupport => Axis::GovernmentSupport,
        }
    }

    pub fn as_str(self) -> &'static str {
        self.axis().as_str()
    }

    /// Random-search runs: 8 for relevance and topic, 5 for the support
    /// classifiers.
    pub fn default_runs(self) -> usize {
        match self {
            Task::Relevance | Task::Topic => 8,
            Task::MeasureSupport | Task::GovernmentSupport => 5,
        }
    }

    /// The support tasks are heavily imbalanced and train on oversampled data.
    pub fn default_oversample(self) -> bool {
        matches!(self, Task::MeasureSupport | Task::GovernmentSupport)
    }

    pub fn classes(self, codebook: &Codebook) -> Vec<String> {
        codebook.values(self.axis()).to_vec()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let axis: Axis = s.parse().map_err(|_| format!("unknown task {s:?}"))?;
        Ok(Task::ALL.into_iter().find(|t| t.axis() == axis).expect("every axis has a task"))
    }
}

/// One labeled text for a single task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: String,
}

/// Training examples for `task` from gold labels joined with post texts.
///
/// Relevance uses every gold post. The other tasks use relevant posts only;
/// the support tasks can further be limited to `topics`.
pub fn examples_for_task(gold: &[GoldLabel], posts: &[Post], task: Task, topics: Option<&[String]>) -> Vec<Example> {
    let texts: HashMap<&str, &str> = posts.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let mut out: Vec<Example> = gold
        .iter()
        .filter(|g| task == Task::Relevance || g.values.relevance == RELEVANT)
        .filter(|g| match (task, topics) {
            (Task::MeasureSupport | Task::GovernmentSupport, Some(ts)) => {
                g.values.topic.as_ref().is_some_and(|t| ts.contains(t))
            }
            _ => true,
        })
        .filter_map(|g| {
            let label = g.values.get(task.axis())?.to_string();
            let text = texts.get(g.post_id.as_str())?;
            Some(Example {
                id: g.post_id.clone(),
                text: text.to_string(),
                label,
            })
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}
