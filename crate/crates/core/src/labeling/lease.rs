use std::collections::{BTreeMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{next_batch, BatchRequest, LabelError, LabelRecord, LabelStore, Prefilter, RecordKey};
use crate::ingest::Post;
use crate::time::iso_seconds;

/// Whether one post is labeled by one annotator per round (`Single`) or
/// co-labeled by several for agreement rounds (`Multi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    #[default]
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub post_id: String,
    pub annotator_id: String,
    pub round: u32,
    #[serde(with = "iso_seconds")]
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimStatus {
    Ok,
    PoolDrained,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClaimOutcome {
    pub status: ClaimStatus,
    pub posts: Vec<Post>,
    pub leases: Vec<Lease>,
}

#[derive(Debug, Error)]
pub enum SubmitError {
    #[error("no live lease on post {post_id:?} for annotator {annotator_id:?}")]
    NoLease { post_id: String, annotator_id: String },
    #[error("record annotator {record:?} does not match session annotator {session:?}")]
    AnnotatorMismatch { session: String, record: String },
    #[error(transparent)]
    Label(#[from] LabelError),
}

/// Time-limited claims on posts, keyed by (post, annotator).
#[derive(Debug, Clone)]
pub struct LeaseBook {
    duration: Duration,
    mode: AnnotationMode,
    leases: BTreeMap<(String, String), Lease>,
}

impl LeaseBook {
    pub fn new(duration: Duration, mode: AnnotationMode) -> Self {
        Self {
            duration,
            mode,
            leases: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> AnnotationMode {
        self.mode
    }

    /// Drops leases that have expired at `now`.
    pub fn expire(&mut self, now: DateTime<Utc>) {
        self.leases.retain(|_, l| l.expires_at > now);
    }

    pub fn live(&self, now: DateTime<Utc>) -> impl Iterator<Item = &Lease> {
        self.leases.values().filter(move |l| l.expires_at > now)
    }

    pub fn holds(&self, post_id: &str, annotator_id: &str, now: DateTime<Utc>) -> bool {
        self.leases
            .get(&(post_id.to_string(), annotator_id.to_string()))
            .is_some_and(|l| l.expires_at > now)
    }

    /// Leases up to `count` posts to `annotator_id`.
    #[allow(clippy::too_many_arguments)]
    pub fn claim(
        &mut self,
        pool: &[Post],
        store: &LabelStore,
        annotator_id: &str,
        round: u32,
        count: usize,
        seed: u64,
        prefilter: Option<&Prefilter>,
        now: DateTime<Utc>,
    ) -> Result<ClaimOutcome, LabelError> {
        self.expire(now);
        let exclude: HashSet<String> = match self.mode {
            AnnotationMode::Single => self
                .leases
                .keys()
                .map(|(post, _)| post.clone())
                .chain(store.labeled_in_round(round).into_iter().map(String::from))
                .collect(),
            AnnotationMode::Multi => self
                .leases
                .keys()
                .filter(|(_, ann)| ann == annotator_id)
                .map(|(post, _)| post.clone())
                .collect(),
        };
        let req = BatchRequest {
            annotator_id,
            round,
            size: count,
            seed,
        };
        let posts = next_batch(pool, store, &req, prefilter, &exclude)?;
        let expires_at = now + self.duration;
        let leases: Vec<Lease> = posts
            .iter()
            .map(|p| Lease {
                post_id: p.id.clone(),
                annotator_id: annotator_id.to_string(),
                round,
                expires_at,
            })
            .collect();
        for lease in &leases {
            self.leases
                .insert((lease.post_id.clone(), lease.annotator_id.clone()), lease.clone());
        }
        let status = if posts.is_empty() {
            ClaimStatus::PoolDrained
        } else {
            ClaimStatus::Ok
        };
        Ok(ClaimOutcome { status, posts, leases })
    }

    /// Stores a label submitted under a live lease and releases the lease.
    /// In review mode no lease is required.
    pub fn submit(
        &mut self,
        store: &mut LabelStore,
        annotator_id: &str,
        record: LabelRecord,
        now: DateTime<Utc>,
        review: bool,
    ) -> Result<RecordKey, SubmitError> {
        if record.annotator_id != annotator_id {
            return Err(SubmitError::AnnotatorMismatch {
                session: annotator_id.to_string(),
                record: record.annotator_id,
            });
        }
        if !review && !self.holds(&record.post_id, annotator_id, now) {
            return Err(SubmitError::NoLease {
                post_id: record.post_id,
                annotator_id: annotator_id.to_string(),
            });
        }
        let lease_key = (record.post_id.clone(), annotator_id.to_string());
        let key = store.record_label(record)?;
        self.leases.remove(&lease_key);
        Ok(key)
    }
}
