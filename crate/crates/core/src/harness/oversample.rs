use std::collections::BTreeMap;

use rand::Rng;

use super::{Example, HarnessError};

/// Balances classes by duplicating minority examples, drawn uniformly with
/// replacement within each class, until every class matches the majority
/// count. The originals come first, in their input order.
pub fn oversample<R: Rng + ?Sized>(train: &[Example], rng: &mut R) -> Result<Vec<Example>, HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::EmptyTrainingSet);
    }
    let mut by_class: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for e in train {
        by_class.entry(e.label.as_str()).or_default().push(e);
    }
    let majority = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out = train.to_vec();
    out.reserve(majority * by_class.len() - train.len());
    for members in by_class.values() {
        for _ in members.len()..majority {
            out.push(members[rng.gen_range(0..members.len())].clone());
        }
    }
    Ok(out)
}
