//! Label records, the label store with its audit trail, gold-label
//! resolution, batch selection, agreement statistics and claim leases.

mod agreement;
mod batch;
mod lease;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{agreement, cohen_kappa, Agreement, AgreementStats};
pub use batch::{next_batch, BatchRequest, PostScorer, Prefilter};
pub use lease::{AnnotationMode, ClaimOutcome, ClaimStatus, Lease, LeaseBook, SubmitError};

use crate::codebook::{Axis, Codebook, LabelValues, Violation};
use crate::time::iso_seconds;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label rejected: {}", display_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("unknown post {0:?}")]
    UnknownPost(String),
    #[error("post {0:?} has no labels to resolve")]
    Unlabeled(String),
    #[error("post {post_id:?} has conflicting labels; a resolver choice is required")]
    ResolutionRequired { post_id: String },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("prefilter scoring failed: {0}")]
    Scoring(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn display_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One annotator's judgment of one post in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub post_id: String,
    pub annotator_id: String,
    pub round: u32,
    #[serde(flatten)]
    pub values: LabelValues,
    #[serde(with = "iso_seconds")]
    pub labeled_at: DateTime<Utc>,
}

impl LabelRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            post_id: self.post_id.clone(),
            annotator_id: self.annotator_id.clone(),
            round: self.round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub post_id: String,
    pub annotator_id: String,
    pub round: u32,
}

impl fmt::Display for RecordKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.post_id, self.annotator_id, self.round)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Unanimous,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub post_id: String,
    #[serde(flatten)]
    pub values: LabelValues,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolver_id: Option<String>,
    pub codebook_version: String,
}

/// Live label records keyed by (post, annotator, round), every submission in
/// arrival order, and resolved gold labels.
#[derive(Debug, Clone)]
pub struct LabelStore {
    codebook: Codebook,
    known_posts: HashSet<String>,
    live: BTreeMap<RecordKey, LabelRecord>,
    audit: Vec<LabelRecord>,
    gold: BTreeMap<String, GoldLabel>,
}

impl LabelStore {
    pub fn new(codebook: Codebook, post_ids: impl IntoIterator<Item = String>) -> Self {
        Self {
            codebook,
            known_posts: post_ids.into_iter().collect(),
            live: BTreeMap::new(),
            audit: Vec::new(),
            gold: BTreeMap::new(),
        }
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn knows_post(&self, post_id: &str) -> bool {
        self.known_posts.contains(post_id)
    }

    /// Validates and stores a record. A resubmission for the same key
    /// replaces the live record; both submissions stay in the audit trail.
    pub fn record_label(&mut self, record: LabelRecord) -> Result<RecordKey, LabelError> {
        if !self.known_posts.contains(&record.post_id) {
            return Err(LabelError::UnknownPost(record.post_id));
        }
        self.codebook.validate(&record.values).map_err(LabelError::Invalid)?;
        let key = record.key();
        self.audit.push(record.clone());
        self.live.insert(key.clone(), record);
        Ok(key)
    }

    pub fn get(&self, key: &RecordKey) -> Option<&LabelRecord> {
        self.live.get(key)
    }

    pub fn audit_trail(&self, key: &RecordKey) -> Vec<&LabelRecord> {
        self.audit.iter().filter(|r| r.key() == *key).collect()
    }

    pub fn audit_log(&self) -> &[LabelRecord] {
        &self.audit
    }

    pub fn records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.live.values()
    }

    pub fn records_for_post<'a>(&'a self, post_id: &'a str) -> impl Iterator<Item = &'a LabelRecord> + 'a {
        self.live.values().filter(move |r| r.post_id == post_id)
    }

    pub fn records_in_round(&self, round: u32) -> impl Iterator<Item = &LabelRecord> {
        self.live.values().filter(move |r| r.round == round)
    }

    /// Posts labeled by `annotator_id` in `round`.
    pub fn labeled_by(&self, annotator_id: &str, round: u32) -> HashSet<&str> {
        self.records_in_round(round)
            .filter(|r| r.annotator_id == annotator_id)
            .map(|r| r.post_id.as_str())
            .collect()
    }

    /// Posts labeled by anyone in `round`.
    pub fn labeled_in_round(&self, round: u32) -> HashSet<&str> {
        self.records_in_round(round).map(|r| r.post_id.as_str()).collect()
    }

    /// Resolves the gold label of a post. Agreeing records resolve as
    /// unanimous regardless of `chosen`; otherwise `chosen` is required and
    /// stored as resolved by `resolver_id`.
    pub fn resolve_gold(
        &mut self,
        post_id: &str,
        chosen: Option<LabelValues>,
        resolver_id: &str,
    ) -> Result<GoldLabel, LabelError> {
        let distinct: BTreeSet<_> = self
            .records_for_post(post_id)
            .map(|r| serde_json::to_string(&r.values).expect("label values serialize"))
            .collect();
        let first = self.records_for_post(post_id).next().map(|r| r.values.clone());
        let gold = match (distinct.len(), first, chosen) {
            (0, _, _) => return Err(LabelError::Unlabeled(post_id.to_string())),
            (1, Some(values), _) => GoldLabel {
                post_id: post_id.to_string(),
                values,
                provenance: Provenance::Unanimous,
                resolver_id: None,
                codebook_version: self.codebook.version.clone(),
            },
            (_, _, Some(values)) => {
                self.codebook.validate(&values).map_err(LabelError::Invalid)?;
                GoldLabel {
                    post_id: post_id.to_string(),
                    values,
                    provenance: Provenance::Resolved,
                    resolver_id: Some(resolver_id.to_string()),
                    codebook_version: self.codebook.version.clone(),
                }
            }
            (_, _, None) => {
                return Err(LabelError::ResolutionRequired {
                    post_id: post_id.to_string(),
                })
            }
        };
        self.gold.insert(post_id.to_string(), gold.clone());
        Ok(gold)
    }

    /// Resolves every labeled post whose records agree. Returns the ids of
    /// posts that still need a resolver.
    pub fn auto_resolve(&mut self) -> Vec<String> {
        let posts: BTreeSet<String> = self.live.keys().map(|k| k.post_id.clone()).collect();
        let mut conflicts = Vec::new();
        for post in posts {
            if self.gold.contains_key(&post) {
                continue;
            }
            if let Err(LabelError::ResolutionRequired { post_id }) = self.resolve_gold(&post, None, "") {
                conflicts.push(post_id);
            }
        }
        conflicts
    }

    pub fn gold(&self) -> impl Iterator<Item = &GoldLabel> {
        self.gold.values()
    }

    pub fn gold_for(&self, post_id: &str) -> Option<&GoldLabel> {
        self.gold.get(post_id)
    }

    /// Writes the live records, one per line.
    pub fn export_labels<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in self.live.values() {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        Ok(())
    }

    /// Writes every submission in arrival order.
    pub fn export_audit<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.audit {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        Ok(())
    }

    pub fn export_gold<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for g in self.gold.values() {
            writeln!(out, "{}", serde_json::to_string(g).expect("gold serializes"))?;
        }
        Ok(())
    }

    /// Replays label records (an export or an audit log) through
    /// `record_label`. Returns the number of records applied.
    pub fn import_labels<R: BufRead>(&mut self, reader: R) -> Result<usize, LabelError> {
        let mut n = 0;
        for (record, line) in read_lines::<LabelRecord, _>(reader)? {
            self.record_label(record).map_err(|e| LabelError::Parse {
                line,
                reason: e.to_string(),
            })?;
            n += 1;
        }
        Ok(n)
    }

    /// Loads gold labels, re-validating each against the current codebook.
    pub fn import_gold<R: BufRead>(&mut self, reader: R) -> Result<usize, LabelError> {
        let mut n = 0;
        for (gold, line) in read_lines::<GoldLabel, _>(reader)? {
            self.codebook.validate(&gold.values).map_err(|v| LabelError::Parse {
                line,
                reason: display_violations(&v),
            })?;
            self.gold.insert(gold.post_id.clone(), gold);
            n += 1;
        }
        Ok(n)
    }
}

/// Reads line-delimited JSON values with their 1-based line numbers.
pub fn read_lines<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(T, usize)>, LabelError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| LabelError::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        out.push((value, idx + 1));
    }
    Ok(out)
}

/// Label value along `axis` as used for agreement tables; an absent topic
/// is its own category.
pub(crate) fn axis_value(values: &LabelValues, axis: Axis) -> String {
    values.get(axis).unwrap_or("(none)").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::parse_instant;

    pub(crate) fn curfew(measure: &str) -> LabelValues {
        LabelValues {
            topic: Some("curfew".into()),
            measure_support: measure.into(),
            government_support: "not-applicable".into(),
            relevance: "relevant".into(),
        }
    }

    fn record(post: &str, annotator: &str, values: LabelValues) -> LabelRecord {
        LabelRecord {
            post_id: post.into(),
            annotator_id: annotator.into(),
            round: 1,
            values,
            labeled_at: parse_instant("2021-01-10T12:00:00Z").unwrap(),
        }
    }

    fn store() -> LabelStore {
        LabelStore::new(Codebook::default(), ["p1", "p2", "p3"].map(String::from))
    }

    #[test]
    fn valid_record_is_stored() {
        let mut s = store();
        let key = s.record_label(record("p1", "ann", curfew("ok"))).unwrap();
        assert_eq!(key.to_string(), "p1/ann/1");
        assert_eq!(s.get(&key).unwrap().values, curfew("ok"));
    }

    #[test]
    fn invalid_record_carries_violations() {
        let mut s = store();
        let err = s.record_label(record("p1", "ann", curfew("very-strict"))).unwrap_err();
        match err {
            LabelError::Invalid(v) => assert_eq!(v.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(s.records().count(), 0);
    }

    #[test]
    fn unknown_post_is_rejected() {
        let mut s = store();
        assert!(matches!(
            s.record_label(record("nope", "ann", curfew("ok"))),
            Err(LabelError::UnknownPost(_))
        ));
    }

    #[test]
    fn resubmission_overwrites_and_audits() {
        let mut s = store();
        s.record_label(record("p1", "ann", curfew("ok"))).unwrap();
        let key = s.record_label(record("p1", "ann", curfew("too-strict"))).unwrap();
        assert_eq!(s.records().count(), 1);
        assert_eq!(s.get(&key).unwrap().values.measure_support, "too-strict");
        assert_eq!(s.audit_trail(&key).len(), 2);
    }

    #[test]
    fn identical_records_resolve_unanimously() {
        let mut s = store();
        s.record_label(record("p1", "a", curfew("ok"))).unwrap();
        s.record_label(record("p1", "b", curfew("ok"))).unwrap();
        let gold = s.resolve_gold("p1", None, "lead").unwrap();
        assert_eq!(gold.provenance, Provenance::Unanimous);
        assert_eq!(gold.values, curfew("ok"));
        assert_eq!(gold.codebook_version, "1.0");
    }

    #[test]
    fn conflicts_need_a_resolver() {
        let mut s = store();
        s.record_label(record("p1", "a", curfew("ok"))).unwrap();
        s.record_label(record("p1", "b", curfew("too-strict"))).unwrap();
        assert!(matches!(s.resolve_gold("p1", None, "lead"), Err(LabelError::ResolutionRequired { .. })));
        assert!(matches!(
            s.resolve_gold("p1", Some(curfew("nope")), "lead"),
            Err(LabelError::Invalid(_))
        ));
        let gold = s.resolve_gold("p1", Some(curfew("too-strict")), "lead").unwrap();
        assert_eq!(gold.provenance, Provenance::Resolved);
        assert_eq!(gold.resolver_id.as_deref(), Some("lead"));
    }

    #[test]
    fn resolving_unlabeled_post_fails() {
        let mut s = store();
        assert!(matches!(s.resolve_gold("p2", Some(curfew("ok")), "lead"), Err(LabelError::Unlabeled(_))));
    }

    #[test]
    fn auto_resolve_reports_conflicts() {
        let mut s = store();
        s.record_label(record("p1", "a", curfew("ok"))).unwrap();
        s.record_label(record("p2", "a", curfew("ok"))).unwrap();
        s.record_label(record("p2", "b", LabelValues::irrelevant())).unwrap();
        assert_eq!(s.auto_resolve(), vec!["p2".to_string()]);
        assert_eq!(s.gold().count(), 1);
    }

    #[test]
    fn export_import_preserves_live_state_and_gold() {
        let mut s = store();
        s.record_label(record("p1", "a", curfew("ok"))).unwrap();
        s.record_label(record("p1", "a", curfew("too-loose"))).unwrap();
        s.record_label(record("p2", "b", LabelValues::irrelevant())).unwrap();
        s.auto_resolve();
        let (mut audit, mut gold) = (Vec::new(), Vec::new());
        s.export_audit(&mut audit).unwrap();
        s.export_gold(&mut gold).unwrap();
        let mut t = store();
        assert_eq!(t.import_labels(audit.as_slice()).unwrap(), 3);
        assert_eq!(t.import_gold(gold.as_slice()).unwrap(), 2);
        assert_eq!(t.records().collect::<Vec<_>>(), s.records().collect::<Vec<_>>());
        assert_eq!(t.audit_log(), s.audit_log());
        assert_eq!(t.gold().collect::<Vec<_>>(), s.gold().collect::<Vec<_>>());
        let line = String::from_utf8(gold).unwrap();
        assert!(line.contains("\"provenance\":\"unanimous\""));
    }
}
