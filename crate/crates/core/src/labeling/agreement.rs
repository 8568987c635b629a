use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{axis_value, LabelStore};
use crate::codebook::Axis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    /// Agreeing co-labels over all co-labels, pooled across annotator pairs.
    pub percent_agreement: f64,
    /// Mean pairwise Cohen's kappa over pairs sharing at least one post.
    pub kappa: f64,
    pub annotator_pairs: usize,
    pub co_labels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Agreement {
    NoOverlap,
    Measured(AgreementStats),
}

/// Cohen's kappa for two aligned label sequences.
///
/// When both annotators use one and the same category throughout, chance
/// agreement is 1 and kappa is defined as 1.
pub fn cohen_kappa<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    assert_eq!(a.len(), b.len(), "sequences must be aligned");
    assert!(!a.is_empty(), "kappa needs at least one item");
    let n = a.len() as f64;
    let mut margin_a: HashMap<&str, f64> = HashMap::new();
    let mut margin_b: HashMap<&str, f64> = HashMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        *margin_a.entry(x).or_default() += 1.0;
        *margin_b.entry(y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let observed = agree / n;
    let expected: f64 = margin_a
        .iter()
        .map(|(c, na)| na / n * margin_b.get(c).copied().unwrap_or(0.0) / n)
        .sum();
    if observed == 1.0 {
        return 1.0;
    }
    (observed - expected) / (1.0 - expected)
}

/// Agreement among the annotators of `round` on one axis.
pub fn agreement(store: &LabelStore, round: u32, axis: Axis) -> Agreement {
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, String>> = BTreeMap::new();
    for r in store.records_in_round(round) {
        by_annotator
            .entry(r.annotator_id.as_str())
            .or_default()
            .insert(r.post_id.as_str(), axis_value(&r.values, axis));
    }
    let annotators: Vec<_> = by_annotator.values().collect();
    let (mut kappas, mut agree, mut shared) = (Vec::new(), 0usize, 0usize);
    for (i, left) in annotators.iter().enumerate() {
        for right in &annotators[i + 1..] {
            let (a, b): (Vec<&str>, Vec<&str>) = left
                .iter()
                .filter_map(|(post, va)| right.get(post).map(|vb| (va.as_str(), vb.as_str())))
                .unzip();
            if a.is_empty() {
                continue;
            }
            agree += a.iter().zip(&b).filter(|(x, y)| x == y).count();
            shared += a.len();
            kappas.push(cohen_kappa(&a, &b));
        }
    }
    if kappas.is_empty() {
        return Agreement::NoOverlap;
    }
    Agreement::Measured(AgreementStats {
        percent_agreement: agree as f64 / shared as f64,
        kappa: kappas.iter().sum::<f64>() / kappas.len() as f64,
        annotator_pairs: kappas.len(),
        co_labels: shared,
    })
}
