//! Corpus ingestion: record parsing, text normalization, the collection
//! filters (search terms, language, location, time window), and the
//! canonical deduplicated corpus store.

mod normalize;
mod store;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use normalize::normalize_text;
pub use store::{dedupe, CorpusStore};

use crate::time::{brussels_day, iso_seconds, parse_instant};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("post {id:?}: text is empty after normalization")]
    EmptyText { id: String },
    #[error("post {id:?}: malformed timestamp {value:?}")]
    MalformedTimestamp { id: String, value: String },
    #[error("line {line}: unreadable record: {reason}")]
    Unreadable { line: usize, reason: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("store failure after committing {committed} posts: {source}")]
    Store {
        committed: usize,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One ingested message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub id: String,
    pub text: String,
    pub lang: String,
    #[serde(with = "iso_seconds")]
    pub created_at: DateTime<Utc>,
    pub place_country: Option<String>,
    pub author_ref: String,
}

impl Post {
    pub fn day(&self) -> NaiveDate {
        brussels_day(self.created_at)
    }

    /// Canonical one-line serialization used by the corpus store.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("post serializes")
    }
}

/// A record as it appears in a raw source file, before timestamp parsing
/// and normalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub text: String,
    pub lang: String,
    pub created_at: String,
    #[serde(default)]
    pub place_country: Option<String>,
    #[serde(default)]
    pub author_ref: String,
}

impl RawRecord {
    /// Parses the timestamp and normalizes the text.
    pub fn into_post(self) -> Result<Post, IngestError> {
        let created_at = parse_instant(&self.created_at).ok_or_else(|| IngestError::MalformedTimestamp {
            id: self.id.clone(),
            value: self.created_at.clone(),
        })?;
        let text = normalize_text(&self.text);
        if text.is_empty() {
            return Err(IngestError::EmptyText { id: self.id });
        }
        let place_country = self
            .place_country
            .map(|c| c.trim().to_ascii_uppercase())
            .filter(|c| !c.is_empty());
        Ok(Post {
            id: self.id,
            text,
            lang: self.lang.trim().to_ascii_lowercase(),
            created_at,
            place_country,
            author_ref: self.author_ref,
        })
    }
}

/// The collection query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestQuery {
    /// Terms grouped by language. A post matches if any term of any
    /// language occurs in it.
    pub search_terms: BTreeMap<String, Vec<String>>,
    pub allowed_langs: BTreeSet<String>,
    pub allowed_country: String,
    /// Accept posts without a place. Off by default.
    #[serde(default)]
    pub accept_missing_place: bool,
    #[serde(with = "iso_seconds")]
    pub window_start: DateTime<Utc>,
    /// Exclusive upper bound.
    #[serde(with = "iso_seconds")]
    pub window_end: DateTime<Utc>,
}

impl IngestQuery {
    /// Parses a TOML query config, case-folds every term and validates.
    pub fn from_toml(src: &str) -> Result<Self, IngestError> {
        let query: IngestQuery = toml::from_str(src).map_err(|e| IngestError::InvalidQuery(e.to_string()))?;
        query.validated()
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validated(mut self) -> Result<Self, IngestError> {
        if self.allowed_langs.is_empty() {
            return Err(IngestError::InvalidQuery("allowed_langs is empty".into()));
        }
        if self.window_start >= self.window_end {
            return Err(IngestError::InvalidQuery("window_start must precede window_end".into()));
        }
        for (lang, terms) in self.search_terms.iter_mut() {
            for term in terms.iter_mut() {
                *term = term.trim().to_lowercase();
                if term.is_empty() {
                    return Err(IngestError::InvalidQuery(format!("empty search term for {lang:?}")));
                }
            }
        }
        if self.search_terms.values().all(Vec::is_empty) {
            return Err(IngestError::InvalidQuery("no search terms".into()));
        }
        self.allowed_langs = self.allowed_langs.iter().map(|l| l.to_ascii_lowercase()).collect();
        self.allowed_country = self.allowed_country.to_ascii_uppercase();
        Ok(self)
    }

    fn terms(&self) -> impl Iterator<Item = &str> {
        self.search_terms.values().flatten().map(String::as_str)
    }
}

/// Default query: an illustrative term list for Belgian COVID-19 posts in
/// Dutch, French and English, October 13 2020 through April 8 2021.
pub const DEFAULT_QUERY_TOML: &str = r#"
allowed_langs = ["nl", "fr", "en"]
allowed_country = "BE"
accept_missing_place = false
window_start = "2020-10-13T00:00:00Z"
window_end = "2021-04-09T00:00:00Z"

[search_terms]
nl = ["corona", "coronavirus", "covid", "avondklok", "mondmasker", "lockdown", "vaccin", "quarantaine", "horeca", "sneltest"]
fr = ["corona", "coronavirus", "covid", "couvre-feu", "masque", "confinement", "vaccin", "quarantaine", "horeca", "dépistage"]
en = ["corona", "coronavirus", "covid", "covid-19", "curfew", "face mask", "lockdown", "vaccine", "quarantine", "testing"]
"#;

impl Default for IngestQuery {
    fn default() -> Self {
        Self::from_toml(DEFAULT_QUERY_TOML).expect("default query is valid")
    }
}

/// True iff `needle` occurs in `haystack` with non-alphanumeric characters
/// (or the string ends) on both sides. Both inputs must already be case-folded.
fn contains_on_boundary(haystack: &str, needle: &str) -> bool {
    haystack.match_indices(needle).any(|(start, m)| {
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[start + m.len()..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        before_ok && after_ok
    })
}

/// Applies the four collection filters to a normalized post.
pub fn match_filters(post: &Post, query: &IngestQuery) -> Result<bool, IngestError> {
    if post.text.is_empty() {
        return Err(IngestError::EmptyText { id: post.id.clone() });
    }
    let folded = post.text.to_lowercase();
    let term_hit = query.terms().any(|t| contains_on_boundary(&folded, t));
    let lang_ok = query.allowed_langs.contains(&post.lang);
    let place_ok = match &post.place_country {
        Some(country) => *country == query.allowed_country,
        None => query.accept_missing_place,
    };
    let window_ok = post.created_at >= query.window_start && post.created_at < query.window_end;
    Ok(term_hit && lang_ok && place_ok && window_ok)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total: usize,
    pub per_day: BTreeMap<NaiveDate, usize>,
    pub per_lang: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn from_posts<'a>(posts: impl IntoIterator<Item = &'a Post>) -> Self {
        let mut stats = CorpusStats::default();
        for post in posts {
            stats.total += 1;
            *stats.per_day.entry(post.day()).or_default() += 1;
            *stats.per_lang.entry(post.lang.clone()).or_default() += 1;
        }
        stats
    }

    pub fn is_consistent(&self) -> bool {
        self.per_day.values().sum::<usize>() == self.total && self.per_lang.values().sum::<usize>() == self.total
    }
}

/// Why a record was not stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Unreadable,
    MalformedTimestamp,
    EmptyText,
    Filtered,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub stats: CorpusStats,
    pub read: usize,
    pub accepted: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
}

/// Records per commit to the store. Each commit is a resumable checkpoint.
pub const COMMIT_CHUNK: usize = 50_000;

fn classify_line(line_no: usize, line: &str, query: &IngestQuery) -> Result<Post, SkipReason> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| {
        tracing::warn!(line = line_no, error = %e, "unreadable record");
        SkipReason::Unreadable
    })?;
    let post = raw.into_post().map_err(|e| {
        tracing::warn!(line = line_no, error = %e, "rejected record");
        match e {
            IngestError::MalformedTimestamp { .. } => SkipReason::MalformedTimestamp,
            _ => SkipReason::EmptyText,
        }
    })?;
    match match_filters(&post, query) {
        Ok(true) => Ok(post),
        Ok(false) => Err(SkipReason::Filtered),
        Err(_) => Err(SkipReason::EmptyText),
    }
}

fn classify_chunk(chunk: &[(usize, String)], query: &IngestQuery) -> Vec<Result<Post, SkipReason>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        chunk.par_iter().map(|(n, l)| classify_line(*n, l, query)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        chunk.iter().map(|(n, l)| classify_line(*n, l, query)).collect()
    }
}

/// Reads line-delimited raw records from `source`, keeps those passing the
/// query, and merges them into `store`. Re-running over the same source
/// leaves the store unchanged.
pub fn ingest<R: BufRead>(source: R, query: &IngestQuery, store: &CorpusStore) -> Result<IngestReport, IngestError> {
    let mut report = IngestReport::default();
    let mut posts: HashMap<String, Post> = store.load()?.into_iter().map(|p| (p.id.clone(), p)).collect();
    let mut chunk = Vec::with_capacity(COMMIT_CHUNK.min(4096));
    let mut lines = source.lines().enumerate();
    loop {
        chunk.clear();
        for (idx, line) in lines.by_ref() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            chunk.push((idx + 1, line));
            if chunk.len() == COMMIT_CHUNK {
                break;
            }
        }
        if chunk.is_empty() {
            break;
        }
        report.read += chunk.len();
        for outcome in classify_chunk(&chunk, query) {
            match outcome {
                Ok(post) => {
                    report.accepted += 1;
                    store::merge_post(&mut posts, post);
                }
                Err(reason) => *report.skipped.entry(reason).or_default() += 1,
            }
        }
        let committed = posts.len();
        store
            .write(posts.values())
            .map_err(|source| IngestError::Store { committed, source })?;
    }
    if report.read == 0 && !store.path().exists() {
        store.write(std::iter::empty())?;
    }
    report.stats = CorpusStats::from_posts(posts.values());
    debug_assert!(report.stats.is_consistent());
    Ok(report)
}
