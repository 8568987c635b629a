use std::collections::HashSet;
use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LabelError, LabelStore};
use crate::ingest::Post;

/// Scores posts for relevance; higher means more likely relevant.
pub trait PostScorer: Send + Sync {
    fn score(&self, texts: &[&str]) -> Result<Vec<f64>, String>;
}

/// Excludes posts scoring below `threshold` from labeling batches.
#[derive(Clone)]
pub struct Prefilter {
    pub scorer: Arc<dyn PostScorer>,
    pub threshold: f64,
}

impl std::fmt::Debug for Prefilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Prefilter").field("threshold", &self.threshold).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BatchRequest<'a> {
    pub annotator_id: &'a str,
    pub round: u32,
    pub size: usize,
    pub seed: u64,
}

impl BatchRequest<'_> {
    fn rng(&self) -> ChaCha8Rng {
        let mut h = FnvHasher::default();
        h.write_u64(self.seed);
        h.write(self.annotator_id.as_bytes());
        h.write_u32(self.round);
        ChaCha8Rng::seed_from_u64(h.finish())
    }
}

const SCORE_CHUNK: usize = 256;

/// Selects up to `req.size` posts the annotator has not labeled in the
/// round, skipping ids in `exclude` and, with a prefilter, posts scoring
/// below its threshold. The order is a seeded shuffle of the eligible posts.
pub fn next_batch(
    pool: &[Post],
    labels: &LabelStore,
    req: &BatchRequest<'_>,
    prefilter: Option<&Prefilter>,
    exclude: &HashSet<String>,
) -> Result<Vec<Post>, LabelError> {
    if req.size == 0 {
        return Err(LabelError::InvalidBatchSize);
    }
    let done = labels.labeled_by(req.annotator_id, req.round);
    let mut candidates: Vec<&Post> = pool
        .iter()
        .filter(|p| !done.contains(p.id.as_str()) && !exclude.contains(&p.id))
        .collect();
    candidates.sort_by(|a, b| a.id.cmp(&b.id));
    candidates.dedup_by(|a, b| a.id == b.id);
    candidates.shuffle(&mut req.rng());

    let Some(filter) = prefilter else {
        return Ok(candidates.into_iter().take(req.size).cloned().collect());
    };
    let mut batch = Vec::with_capacity(req.size);
    for chunk in candidates.chunks(SCORE_CHUNK) {
        let texts: Vec<&str> = chunk.iter().map(|p| p.text.as_str()).collect();
        let scores = filter.scorer.score(&texts).map_err(LabelError::Scoring)?;
        for (post, score) in chunk.iter().zip(scores) {
            if score >= filter.threshold {
                batch.push((*post).clone());
                if batch.len() == req.size {
                    return Ok(batch);
                }
            }
        }
    }
    Ok(batch)
}
