//! Browser bindings for three small views onto the core crate: a ROC and
//! zero-false-positive threshold explorer, a synthetic opinion timeline
//! with adjustable smoothing, and a Cohen's kappa calculator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use stancetrack_core::analytics::{build_timeline, default_markers, Panel, TimelineQuery};
use stancetrack_core::codebook::Codebook;
use stancetrack_core::labeling::cohen_kappa;
use stancetrack_core::metrics::{auc, roc_area, roc_points, threshold_at_zero_fpr, RocPoint, Scored};
use stancetrack_core::sieve::{ClassifiedPost, StageOutput};
use stancetrack_core::synth::{generate_corpus, SynthConfig};

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[derive(Serialize)]
struct RocView {
    points: Vec<RocPoint>,
    auc_trapezoid: f64,
    auc_rank: f64,
    /// Serialized as null when no positive clears every negative.
    threshold: Option<f64>,
    tpr_at_zero_fpr: f64,
    positives: usize,
    negatives: usize,
}

/// Draws `n` scores from two overlapping normals whose means lie
/// `separation` standard deviations apart, then reports the ROC curve, its
/// area by both routes and the zero-FPR operating point.
#[wasm_bindgen]
pub fn roc_explorer(n: usize, separation: f64, positive_share: f64, seed: u64) -> Result<String, JsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.clamp(4, 5000);
    let share = positive_share.clamp(0.05, 0.95);
    let mut scores: Vec<Scored> = (0..n)
        .map(|_| {
            let positive = rng.gen_bool(share);
            // Box-Muller
            let (u, v): (f64, f64) = (rng.gen_range(f64::EPSILON..1.0), rng.gen());
            let z = (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos();
            let mean = if positive { separation } else { 0.0 };
            (1.0 / (1.0 + (-(z + mean - separation / 2.0)).exp()), positive)
        })
        .collect();
    scores[0].1 = true;
    scores[1].1 = false;
    let points = roc_points(&scores).map_err(|e| JsError::new(&e.to_string()))?;
    let op = threshold_at_zero_fpr(&scores).map_err(|e| JsError::new(&e.to_string()))?;
    let positives = scores.iter().filter(|s| s.1).count();
    to_js(&RocView {
        auc_trapezoid: roc_area(&points),
        auc_rank: auc(&scores).map_err(|e| JsError::new(&e.to_string()))?,
        threshold: op.threshold.is_finite().then_some(op.threshold),
        tpr_at_zero_fpr: op.tpr,
        positives,
        negatives: n - positives,
        points,
    })
}

fn stage(label: &str) -> StageOutput {
    StageOutput {
        label: label.to_string(),
        probabilities: BTreeMap::from([(label.to_string(), 1.0)]),
    }
}

#[derive(Serialize)]
struct Line {
    name: String,
    days: Vec<String>,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct TimelineView {
    topic_rate: Vec<Line>,
    stances: Vec<Line>,
    markers: Vec<(String, String)>,
}

/// Generates a synthetic corpus, takes its true labels as the classifier
/// output and returns the topic rate and stance fractions for `topic`,
/// smoothed over `window` days (odd; 1 is raw).
#[wasm_bindgen]
pub fn synthetic_timeline(posts: usize, seed: u64, topic: &str, window: usize, drop_not_applicable: bool) -> Result<String, JsError> {
    let codebook = Codebook::default();
    let corpus = generate_corpus(&SynthConfig {
        posts: posts.clamp(100, 20_000),
        seed,
        ..Default::default()
    });
    let classified: Vec<ClassifiedPost> = corpus
        .iter()
        .map(|s| {
            let relevant = s.truth.relevance == "relevant";
            let support = |v: &str| relevant.then(|| stage(v));
            ClassifiedPost {
                post_id: s.post.id.clone(),
                created_at: s.post.created_at,
                relevance_score: if relevant { 1.0 } else { 0.0 },
                relevant,
                topic: s.truth.topic.as_deref().map(stage),
                measure_support: support(&s.truth.measure_support),
                government_support: support(&s.truth.government_support),
                model_fingerprints: BTreeMap::new(),
            }
        })
        .collect();
    let query = TimelineQuery {
        topic: topic.to_string(),
        smoothing: window,
        drop_not_applicable,
        ..Default::default()
    };
    let payload = build_timeline(&classified, &query, None, &default_markers(), &codebook).map_err(|e| JsError::new(&e.to_string()))?;
    let lines = |panel: Panel| {
        payload
            .data
            .panel(panel, window)
            .map(|s| Line {
                name: s.name.clone(),
                days: s.points().iter().map(|p| p.day.to_string()).collect(),
                values: s.points().iter().map(|p| p.value).collect(),
            })
            .collect()
    };
    to_js(&TimelineView {
        topic_rate: lines(Panel::TopicRate),
        stances: lines(Panel::Stance),
        markers: payload.data.markers.iter().map(|m| (m.day.to_string(), m.caption().to_string())).collect(),
    })
}

#[derive(Serialize)]
struct KappaView {
    items: usize,
    percent_agreement: f64,
    kappa: f64,
}

/// Cohen's kappa for two whitespace- or comma-separated label sequences.
#[wasm_bindgen]
pub fn kappa(a: &str, b: &str) -> Result<String, JsError> {
    let split = |s: &str| -> Vec<String> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect()
    };
    let (a, b) = (split(a), split(b));
    if a.is_empty() || a.len() != b.len() {
        return Err(JsError::new(&format!("need two non-empty sequences of equal length, got {} and {}", a.len(), b.len())));
    }
    let agree = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    to_js(&KappaView {
        items: a.len(),
        percent_agreement: agree as f64 / a.len() as f64,
        kappa: cohen_kappa(&a, &b),
    })
}
