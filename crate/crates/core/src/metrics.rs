//! Classification metrics: pairwise AUC, ROC curves, the zero-false-positive
//! operating point, and the multiclass evaluation report.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("AUC undefined: {positives} positive and {negatives} negative examples")]
    UndefinedAuc { positives: usize, negatives: usize },
    #[error("no negative examples: false positive rate is undefined")]
    NoNegatives,
    #[error("non-finite score {0}")]
    NonFinite(f64),
    #[error("empty test set")]
    EmptyTest,
    #[error("test label {0:?} is not one of the model classes")]
    UnknownLabel(String),
    #[error("expected {expected} probability vectors of width {width}, got {got}")]
    Shape { expected: usize, width: usize, got: String },
}

/// A (score, is_positive) pair.
pub type Scored = (f64, bool);

fn check_finite(scores: &[Scored]) -> Result<(usize, usize), MetricError> {
    let mut pos = 0;
    for &(s, y) in scores {
        if !s.is_finite() {
            return Err(MetricError::NonFinite(s));
        }
        pos += y as usize;
    }
    Ok((pos, scores.len() - pos))
}

fn require_both(scores: &[Scored]) -> Result<(usize, usize), MetricError> {
    let (positives, negatives) = check_finite(scores)?;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::UndefinedAuc { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Runs of equal score, in descending score order, as
/// (score, positives, negatives).
fn tie_groups_desc(scores: &[Scored]) -> Vec<(f64, usize, usize)> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (s, y) in sorted {
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if y {
                    g.1 += 1
                } else {
                    g.2 += 1
                }
            }
            _ => groups.push((s, y as usize, (!y) as usize)),
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from tie groups in O(n log n).
pub fn auc(scores: &[Scored]) -> Result<f64, MetricError> {
    let (positives, negatives) = require_both(scores)?;
    let mut negatives_below = negatives as f64;
    let mut wins = 0.0;
    for (_, p, n) in tie_groups_desc(scores) {
        negatives_below -= n as f64;
        wins += p as f64 * (negatives_below + 0.5 * n as f64);
    }
    Ok(wins / (positives as f64 * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Predict positive iff score ≥ threshold. The first point has `+inf`.
    #[serde(with = "extended_f64")]
    pub threshold: f64,
}

/// One ROC point per distinct score, preceded by `(0, 0)` at threshold
/// `+inf`. The last point is always `(1, 1)`.
pub fn roc_points(scores: &[Scored]) -> Result<Vec<RocPoint>, MetricError> {
    let (positives, negatives) = require_both(scores)?;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, p, n) in tie_groups_desc(scores) {
        tp += p;
        fp += n;
        points.push(RocPoint {
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
            threshold: s,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn roc_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub tpr: f64,
}

/// The most permissive threshold that still admits no negative: the lowest
/// positive score strictly above every negative score. Returns `+inf` with
/// `tpr = 0` when no positive clears the negatives.
pub fn threshold_at_zero_fpr(scores: &[Scored]) -> Result<OperatingPoint, MetricError> {
    let (positives, negatives) = check_finite(scores)?;
    if negatives == 0 {
        return Err(MetricError::NoNegatives);
    }
    let max_negative = scores
        .iter()
        .filter(|s| !s.1)
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let above: Vec<f64> = scores.iter().filter(|s| s.1 && s.0 > max_negative).map(|s| s.0).collect();
    let threshold = above.iter().copied().fold(f64::INFINITY, f64::min);
    let tpr = if positives == 0 {
        0.0
    } else {
        above.len() as f64 / positives as f64
    };
    Ok(OperatingPoint { threshold, tpr })
}

/// Same operating point read off a ROC curve: the zero-FPR point with the
/// highest TPR.
pub fn threshold_at_zero_fpr_from_roc(points: &[RocPoint]) -> OperatingPoint {
    points
        .iter()
        .filter(|p| p.fpr == 0.0)
        .max_by(|a, b| a.tpr.partial_cmp(&b.tpr).unwrap_or(Ordering::Equal))
        .map(|p| OperatingPoint {
            threshold: if p.tpr == 0.0 { f64::INFINITY } else { p.threshold },
            tpr: p.tpr,
        })
        .unwrap_or(OperatingPoint {
            threshold: f64::INFINITY,
            tpr: 0.0,
        })
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let k = classes.len();
        Self {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Accuracy of the binary task "is it `class`?".
    pub fn one_vs_rest_accuracy(&self, class: usize) -> f64 {
        let total = self.total();
        let tp = self.counts[class][class];
        let fn_ = self.support(class) - tp;
        let fp: usize = (0..self.classes.len()).map(|r| self.counts[r][class]).sum::<usize>() - tp;
        (total - fn_ - fp) as f64 / total as f64
    }

    /// Mean of the one-vs-rest accuracies over all classes.
    pub fn macro_accuracy(&self) -> f64 {
        let k = self.classes.len();
        (0..k).map(|c| self.one_vs_rest_accuracy(c)).sum::<f64>() / k as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClassAuc {
    Value(f64),
    /// Fewer than two test examples of the class, or no examples of any
    /// other class.
    Insufficient { insufficient_support: usize },
}

impl ClassAuc {
    pub fn value(self) -> Option<f64> {
        match self {
            ClassAuc::Value(v) => Some(v),
            ClassAuc::Insufficient { .. } => None,
        }
    }
}

/// Minimum test support for reporting a per-class AUC.
pub const MIN_AUC_SUPPORT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub n_test: usize,
    pub accuracy: f64,
    pub macro_accuracy: f64,
    pub per_class_auc: BTreeMap<String, ClassAuc>,
    pub confusion: ConfusionMatrix,
    pub roc: BTreeMap<String, Vec<RocPoint>>,
}

/// Index of the largest probability; ties go to the lowest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Builds the report from per-example probability vectors (aligned with
/// `classes`) and true labels.
pub fn evaluate_predictions(classes: &[String], probs: &[Vec<f64>], labels: &[String]) -> Result<EvalReport, MetricError> {
    if labels.is_empty() {
        return Err(MetricError::EmptyTest);
    }
    if probs.len() != labels.len() || probs.iter().any(|p| p.len() != classes.len()) {
        return Err(MetricError::Shape {
            expected: labels.len(),
            width: classes.len(),
            got: format!("{} vectors", probs.len()),
        });
    }
    let truth: Vec<usize> = labels
        .iter()
        .map(|l| {
            classes
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| MetricError::UnknownLabel(l.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut confusion = ConfusionMatrix::new(classes.to_vec());
    for (p, &t) in probs.iter().zip(&truth) {
        confusion.counts[t][argmax(p)] += 1;
    }
    let mut per_class_auc = BTreeMap::new();
    let mut roc = BTreeMap::new();
    for (c, class) in classes.iter().enumerate() {
        let support = confusion.support(c);
        let scored: Vec<Scored> = probs.iter().zip(&truth).map(|(p, &t)| (p[c], t == c)).collect();
        let entry = if support < MIN_AUC_SUPPORT || support == labels.len() {
            ClassAuc::Insufficient {
                insufficient_support: support,
            }
        } else {
            roc.insert(class.clone(), roc_points(&scored)?);
            ClassAuc::Value(auc(&scored)?)
        };
        per_class_auc.insert(class.clone(), entry);
    }
    Ok(EvalReport {
        classes: classes.to_vec(),
        n_test: labels.len(),
        accuracy: confusion.accuracy(),
        macro_accuracy: confusion.macro_accuracy(),
        per_class_auc,
        confusion,
        roc,
    })
}

/// Serde adapter for reals that may be infinite: infinities are written as
/// the strings `"+inf"` / `"-inf"`.
pub mod extended_f64 {
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("+inf")
        } else if *v == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "+inf" || t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(D::Error::custom(format!("expected a number or ±inf, got {t:?}"))),
        }
    }
}
