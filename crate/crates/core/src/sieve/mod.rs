//! The classification cascade: a relevance sieve, a topic classifier and the
//! two support classifiers, applied to a corpus in checkpointed batches.

mod config;
mod corpus;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ModelRef, PipelineConfig};
pub use corpus::{ClassifiedCorpus, CorpusSummary};
pub use run::{run_pipeline, RunControl};

use crate::codebook::Codebook;
use crate::harness::{check_probabilities, BackendError, ClassifierModel, HarnessError, Task, TrainedClassifier};
use crate::ingest::Post;
use crate::metrics::argmax;
use crate::time::{brussels_day, iso_seconds};

#[derive(Debug, Error)]
pub enum SieveError {
    #[error("{stage} stage failed on the batch starting at post {first_post:?}: {source}")]
    Backend {
        stage: Task,
        first_post: String,
        #[source]
        source: BackendError,
    },
    #[error("expected a {expected} model, got {got}")]
    WrongTask { expected: String, got: Task },
    #[error("post {post_id:?} has topic {topic:?}, outside the target topics")]
    Precondition { post_id: String, topic: Option<String> },
    #[error("{stage} model was built for codebook {model:?}, pipeline uses {expected:?}")]
    VersionMismatch { stage: Task, model: String, expected: String },
    #[error("{path}: content hash {actual} does not match configured {expected}")]
    HashMismatch { path: String, expected: String, actual: String },
    #[error("pipeline config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("interrupted after {completed} of {total} batches")]
    Interrupted { completed: usize, total: usize },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A loaded model bound to its cascade stage.
#[derive(Clone)]
pub struct StageModel {
    pub task: Task,
    pub model: Arc<dyn ClassifierModel>,
    pub fingerprint: String,
    pub codebook_version: String,
}

impl StageModel {
    pub fn new(task: Task, model: Arc<dyn ClassifierModel>, codebook_version: impl Into<String>) -> Self {
        Self {
            task,
            fingerprint: model.fingerprint(),
            model,
            codebook_version: codebook_version.into(),
        }
    }

    pub fn from_trained(classifier: &TrainedClassifier, codebook_version: &str) -> Self {
        Self::new(classifier.task, classifier.model.clone(), codebook_version)
    }

    fn expect(&self, task: Task) -> Result<(), SieveError> {
        if self.task == task {
            Ok(())
        } else {
            Err(SieveError::WrongTask {
                expected: task.to_string(),
                got: self.task,
            })
        }
    }
}

/// Output of one classification stage for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutput {
    pub label: String,
    pub probabilities: BTreeMap<String, f64>,
}

/// A corpus post with every stage output it reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedPost {
    pub post_id: String,
    #[serde(with = "iso_seconds")]
    pub created_at: DateTime<Utc>,
    pub relevance_score: f64,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<StageOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure_support: Option<StageOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub government_support: Option<StageOutput>,
    /// Fingerprint of the model behind each stage this post went through.
    pub model_fingerprints: BTreeMap<Task, String>,
}

impl ClassifiedPost {
    pub fn day(&self) -> NaiveDate {
        brussels_day(self.created_at)
    }

    pub fn topic_label(&self) -> Option<&str> {
        self.topic.as_ref().map(|t| t.label.as_str())
    }

    pub fn stage(&self, task: Task) -> Option<&StageOutput> {
        match task {
            Task::Relevance => None,
            Task::Topic => self.topic.as_ref(),
            Task::MeasureSupport => self.measure_support.as_ref(),
            Task::GovernmentSupport => self.government_support.as_ref(),
        }
    }
}

/// A post with its relevance score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPost {
    pub post: Post,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SieveOutcome {
    pub relevant: Vec<ScoredPost>,
    pub removed: Vec<ScoredPost>,
}

fn predict(stage: &StageModel, posts: &[&Post]) -> Result<Vec<Vec<f64>>, SieveError> {
    let Some(first) = posts.first() else {
        return Ok(Vec::new());
    };
    let texts: Vec<&str> = posts.iter().map(|p| p.text.as_str()).collect();
    stage
        .model
        .predict_proba(&texts)
        .and_then(|probs| {
            check_probabilities(&probs, texts.len(), stage.model.classes().len())?;
            Ok(probs)
        })
        .map_err(|source| SieveError::Backend {
            stage: stage.task,
            first_post: first.id.clone(),
            source,
        })
}

fn outputs(stage: &StageModel, probs: Vec<Vec<f64>>) -> Vec<StageOutput> {
    let classes = stage.model.classes();
    probs
        .into_iter()
        .map(|p| StageOutput {
            label: classes[argmax(&p)].clone(),
            probabilities: classes.iter().cloned().zip(p).collect(),
        })
        .collect()
}

fn relevance_scores(stage: &StageModel, posts: &[&Post]) -> Result<Vec<f64>, SieveError> {
    stage.expect(Task::Relevance)?;
    let index = stage
        .model
        .classes()
        .iter()
        .position(|c| c == crate::codebook::RELEVANT)
        .ok_or_else(|| SieveError::Config("relevance model lacks the relevant class".into()))?;
    Ok(predict(stage, posts)?.into_iter().map(|p| p[index]).collect())
}

/// Splits `posts` at `threshold` on P(relevant): scores at or above it are
/// kept. An infinite threshold removes everything.
pub fn apply_relevance_sieve(posts: Vec<Post>, stage: &StageModel, threshold: f64) -> Result<SieveOutcome, SieveError> {
    let refs: Vec<&Post> = posts.iter().collect();
    let scores = relevance_scores(stage, &refs)?;
    let mut out = SieveOutcome::default();
    for (post, score) in posts.into_iter().zip(scores) {
        let scored = ScoredPost { post, score };
        if score >= threshold {
            out.relevant.push(scored);
        } else {
            out.removed.push(scored);
        }
    }
    Ok(out)
}

/// Topic label and probabilities for each post, in input order.
pub fn classify_topics(posts: &[&Post], stage: &StageModel) -> Result<Vec<StageOutput>, SieveError> {
    stage.expect(Task::Topic)?;
    Ok(outputs(stage, predict(stage, posts)?))
}

/// Support label and probabilities for each `(post, topic)` pair. With
/// `required_topics`, every topic must belong to that set.
pub fn classify_support(
    posts: &[(&Post, &str)],
    stage: &StageModel,
    required_topics: Option<&BTreeSet<String>>,
) -> Result<Vec<StageOutput>, SieveError> {
    if !matches!(stage.task, Task::MeasureSupport | Task::GovernmentSupport) {
        return Err(SieveError::WrongTask {
            expected: "support".into(),
            got: stage.task,
        });
    }
    if let Some(required) = required_topics {
        if let Some((post, topic)) = posts.iter().find(|(_, t)| !required.contains(*t)) {
            return Err(SieveError::Precondition {
                post_id: post.id.clone(),
                topic: Some(topic.to_string()),
            });
        }
    }
    let refs: Vec<&Post> = posts.iter().map(|(p, _)| *p).collect();
    Ok(outputs(stage, predict(stage, &refs)?))
}

/// A ready-to-run cascade.
#[derive(Clone)]
pub struct Pipeline {
    pub codebook_version: String,
    pub relevance: StageModel,
    pub threshold: f64,
    pub topic: StageModel,
    pub measure_support: Option<StageModel>,
    pub government_support: Option<StageModel>,
    pub target_topics: BTreeSet<String>,
    pub support_on_all_relevant: bool,
    pub batch_size: usize,
}

pub const DEFAULT_BATCH_SIZE: usize = 256;

pub fn default_target_topics() -> BTreeSet<String> {
    BTreeSet::from(["curfew".to_string()])
}

impl Pipeline {
    /// Checks stage tasks, codebook versions and target topics.
    pub fn check(&self, codebook: &Codebook) -> Result<(), SieveError> {
        if self.codebook_version != codebook.version {
            return Err(SieveError::Config(format!(
                "pipeline uses codebook {:?}, loaded codebook is {:?}",
                self.codebook_version, codebook.version
            )));
        }
        self.relevance.expect(Task::Relevance)?;
        self.topic.expect(Task::Topic)?;
        if let Some(s) = &self.measure_support {
            s.expect(Task::MeasureSupport)?;
        }
        if let Some(s) = &self.government_support {
            s.expect(Task::GovernmentSupport)?;
        }
        for stage in self.stages() {
            if stage.codebook_version != self.codebook_version {
                return Err(SieveError::VersionMismatch {
                    stage: stage.task,
                    model: stage.codebook_version.clone(),
                    expected: self.codebook_version.clone(),
                });
            }
        }
        let topics = codebook.values(crate::codebook::Axis::Topic);
        if let Some(t) = self.target_topics.iter().find(|t| !topics.contains(t)) {
            return Err(SieveError::Config(format!("target topic {t:?} is not a codebook topic")));
        }
        if self.batch_size == 0 {
            return Err(SieveError::Config("batch_size must be positive".into()));
        }
        if self.threshold.is_nan() {
            return Err(SieveError::Config("relevance threshold is NaN".into()));
        }
        Ok(())
    }

    pub fn stages(&self) -> impl Iterator<Item = &StageModel> {
        [Some(&self.relevance), Some(&self.topic), self.measure_support.as_ref(), self.government_support.as_ref()]
            .into_iter()
            .flatten()
    }

    fn support_applies(&self, topic: &str) -> bool {
        self.support_on_all_relevant || self.target_topics.contains(topic)
    }

    /// Runs every stage on one batch, returning one record per post in input
    /// order.
    pub fn classify_batch(&self, posts: &[Post]) -> Result<Vec<ClassifiedPost>, SieveError> {
        let refs: Vec<&Post> = posts.iter().collect();
        let scores = relevance_scores(&self.relevance, &refs)?;
        let mut out: Vec<ClassifiedPost> = posts
            .iter()
            .zip(&scores)
            .map(|(p, &score)| ClassifiedPost {
                post_id: p.id.clone(),
                created_at: p.created_at,
                relevance_score: score,
                relevant: score >= self.threshold,
                topic: None,
                measure_support: None,
                government_support: None,
                model_fingerprints: BTreeMap::from([(Task::Relevance, self.relevance.fingerprint.clone())]),
            })
            .collect();

        let kept: Vec<usize> = (0..posts.len()).filter(|&i| out[i].relevant).collect();
        let kept_posts: Vec<&Post> = kept.iter().map(|&i| &posts[i]).collect();
        for (&i, topic) in kept.iter().zip(classify_topics(&kept_posts, &self.topic)?) {
            out[i].topic = Some(topic);
            out[i].model_fingerprints.insert(Task::Topic, self.topic.fingerprint.clone());
        }

        let on_topic: Vec<usize> = kept
            .into_iter()
            .filter(|&i| out[i].topic_label().is_some_and(|t| self.support_applies(t)))
            .collect();
        let required = (!self.support_on_all_relevant).then_some(&self.target_topics);
        for stage in [&self.measure_support, &self.government_support].into_iter().flatten() {
            let labels: Vec<String> = on_topic.iter().map(|&i| out[i].topic_label().unwrap_or_default().to_string()).collect();
            let pairs: Vec<(&Post, &str)> = on_topic.iter().zip(&labels).map(|(&i, t)| (&posts[i], t.as_str())).collect();
            let results = classify_support(&pairs, stage, required)?;
            for (&i, result) in on_topic.iter().zip(results) {
                let post = &mut out[i];
                match stage.task {
                    Task::MeasureSupport => post.measure_support = Some(result),
                    _ => post.government_support = Some(result),
                }
                post.model_fingerprints.insert(stage.task, stage.fingerprint.clone());
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::harness::BackendError;
    use crate::time::parse_instant;

    /// Scores by keyword: P(first class) = 0.9 when the text contains the
    /// class name's keyword, else spread evenly over the rest.
    pub(crate) struct KeywordModel {
        pub classes: Vec<String>,
        pub keywords: Vec<String>,
    }

    impl ClassifierModel for KeywordModel {
        fn backend_id(&self) -> &str {
            "keyword"
        }
        fn classes(&self) -> &[String] {
            &self.classes
        }
        fn predict_proba(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
            let k = self.classes.len();
            Ok(texts
                .iter()
                .map(|t| match self.keywords.iter().position(|w| t.contains(w.as_str())) {
                    Some(i) => {
                        let mut p = vec![0.1 / (k - 1) as f64; k];
                        p[i] = 0.9;
                        p
                    }
                    None => vec![1.0 / k as f64; k],
                })
                .collect())
        }
        fn to_bytes(&self) -> Result<Vec<u8>, BackendError> {
            Ok(format!("{:?}{:?}", self.classes, self.keywords).into_bytes())
        }
    }

    /// Relevance score read from the text: "score=0.42 ...".
    pub(crate) struct ScoreInText;

    impl ClassifierModel for ScoreInText {
        fn backend_id(&self) -> &str {
            "score-in-text"
        }
        fn classes(&self) -> &[String] {
            static C: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| vec!["relevant".into(), "irrelevant".into()]);
            &C
        }
        fn predict_proba(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
            texts
                .iter()
                .map(|t| {
                    let s: f64 = t
                        .strip_prefix("score=")
                        .and_then(|r| r.split_whitespace().next())
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| BackendError::Inference(format!("no score in {t:?}")))?;
                    Ok(vec![s, 1.0 - s])
                })
                .collect()
        }
        fn to_bytes(&self) -> Result<Vec<u8>, BackendError> {
            Ok(b"score-in-text".to_vec())
        }
    }

    pub(crate) fn post(id: &str, text: &str) -> Post {
        Post {
            id: id.into(),
            text: text.into(),
            lang: "nl".into(),
            created_at: parse_instant("2021-01-10T12:00:00Z").unwrap(),
            place_country: Some("BE".into()),
            author_ref: "u".into(),
        }
    }

    pub(crate) fn topic_stage() -> StageModel {
        let codebook = Codebook::default();
        let classes = codebook.values(crate::codebook::Axis::Topic).to_vec();
        let keywords = classes.iter().map(|c| format!("#{c}")).collect();
        StageModel::new(Task::Topic, Arc::new(KeywordModel { classes, keywords }), "1.0")
    }

    pub(crate) fn support_stage(task: Task) -> StageModel {
        let classes = Codebook::default().values(task.axis()).to_vec();
        let keywords = classes.iter().map(|c| format!("!{c}")).collect();
        StageModel::new(task, Arc::new(KeywordModel { classes, keywords }), "1.0")
    }

    pub(crate) fn relevance_stage() -> StageModel {
        StageModel::new(Task::Relevance, Arc::new(ScoreInText), "1.0")
    }

    pub(crate) fn pipeline() -> Pipeline {
        Pipeline {
            codebook_version: "1.0".into(),
            relevance: relevance_stage(),
            threshold: 0.5,
            topic: topic_stage(),
            measure_support: Some(support_stage(Task::MeasureSupport)),
            government_support: Some(support_stage(Task::GovernmentSupport)),
            target_topics: default_target_topics(),
            support_on_all_relevant: false,
            batch_size: 4,
        }
    }

    fn scored_posts(scores: &[f64]) -> Vec<Post> {
        scores.iter().enumerate().map(|(i, s)| post(&format!("p{i:03}"), &format!("score={s}"))).collect()
    }

    #[test]
    fn infinite_threshold_removes_all() {
        let out = apply_relevance_sieve(scored_posts(&[0.0, 0.5, 1.0]), &relevance_stage(), f64::INFINITY).unwrap();
        assert!(out.relevant.is_empty());
        assert_eq!(out.removed.len(), 3);
    }

    #[test]
    fn zero_threshold_keeps_all() {
        let out = apply_relevance_sieve(scored_posts(&[0.0, 0.5, 1.0]), &relevance_stage(), 0.0).unwrap();
        assert_eq!(out.relevant.len(), 3);
    }

    #[test]
    fn hundred_posts_forty_below() {
        let scores: Vec<f64> = (0..100).map(|i| if i % 5 < 2 { 0.3 + (i as f64) / 1000.0 } else { 0.6 + (i as f64) / 1000.0 }).collect();
        let posts = scored_posts(&scores);
        let out = apply_relevance_sieve(posts.clone(), &relevance_stage(), 0.6).unwrap();
        let recount = scores.iter().filter(|&&s| s >= 0.6).count();
        assert_eq!(recount, 60);
        assert_eq!(out.relevant.len(), 60);
        let mut ids: Vec<&str> = out.relevant.iter().chain(&out.removed).map(|s| s.post.id.as_str()).collect();
        ids.sort();
        let mut want: Vec<&str> = posts.iter().map(|p| p.id.as_str()).collect();
        want.sort();
        assert_eq!(ids, want);
    }

    #[test]
    fn sieve_requires_relevance_model() {
        assert!(matches!(
            apply_relevance_sieve(vec![], &topic_stage(), 0.5),
            Err(SieveError::WrongTask { .. })
        ));
    }

    #[test]
    fn backend_failure_names_the_batch() {
        let err = apply_relevance_sieve(vec![post("x1", "no score")], &relevance_stage(), 0.5).unwrap_err();
        assert!(err.to_string().contains("x1"));
    }

    #[test]
    fn topics_and_support() {
        assert!(classify_topics(&[], &topic_stage()).unwrap().is_empty());
        let a = post("a", "#curfew tonight");
        let b = post("b", "#masks again");
        let topics = classify_topics(&[&a, &b], &topic_stage()).unwrap();
        assert_eq!(topics[0].label, "curfew");
        assert_eq!(topics[1].label, "masks");
        assert!((topics[0].probabilities.values().sum::<f64>() - 1.0).abs() < 1e-9);

        let stage = support_stage(Task::MeasureSupport);
        let targets = default_target_topics();
        assert!(classify_support(&[], &stage, Some(&targets)).unwrap().is_empty());
        let c = post("c", "#curfew !too-strict");
        let got = classify_support(&[(&c, "curfew")], &stage, Some(&targets)).unwrap();
        assert_eq!(got[0].label, "too-strict");
        let err = classify_support(&[(&c, "curfew"), (&b, "masks")], &stage, Some(&targets)).unwrap_err();
        assert!(matches!(err, SieveError::Precondition { ref post_id, .. } if post_id == "b"));
        assert!(classify_support(&[(&b, "masks")], &stage, None).is_ok());
        assert!(classify_support(&[(&b, "masks")], &topic_stage(), None).is_err());
    }

    #[test]
    fn batch_follows_the_cascade() {
        let posts = vec![
            post("a", "score=0.9 #curfew !ok"),
            post("b", "score=0.9 #masks !ok"),
            post("c", "score=0.1 #curfew !ok"),
        ];
        let out = pipeline().classify_batch(&posts).unwrap();
        assert_eq!(out[0].measure_support.as_ref().unwrap().label, "ok");
        assert_eq!(out[0].model_fingerprints.len(), 4);
        assert_eq!(out[1].topic_label(), Some("masks"));
        assert!(out[1].measure_support.is_none());
        assert!(!out[2].relevant && out[2].topic.is_none());
        assert_eq!(out[2].relevance_score, 0.1);

        let mut all = pipeline();
        all.support_on_all_relevant = true;
        let out = all.classify_batch(&posts).unwrap();
        assert!(out[1].measure_support.is_some());
    }

    #[test]
    fn pipeline_check() {
        let codebook = Codebook::default();
        pipeline().check(&codebook).unwrap();
        let mut p = pipeline();
        p.target_topics.insert("weather".into());
        assert!(p.check(&codebook).is_err());
        let mut p = pipeline();
        p.topic.codebook_version = "0.9".into();
        assert!(matches!(p.check(&codebook), Err(SieveError::VersionMismatch { .. })));
        let mut p = pipeline();
        p.measure_support = Some(topic_stage());
        assert!(matches!(p.check(&codebook), Err(SieveError::WrongTask { .. })));
    }
}
