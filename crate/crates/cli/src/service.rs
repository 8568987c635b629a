//! The `/v1` labeling and timeline service.
//!
//! | method | path                 | body / query                          |
//! |--------|----------------------|---------------------------------------|
//! | GET    | `/v1/health`         |                                       |
//! | GET    | `/v1/codebook`       |                                       |
//! | POST   | `/v1/claim`          | `{"round", "count"}`                  |
//! | POST   | `/v1/labels`         | label record fields, `"review"`       |
//! | GET    | `/v1/agreement`      | `?round=`                             |
//! | GET    | `/v1/disagreements`  | `?round=`                             |
//! | POST   | `/v1/resolve`        | `{"post_id", "values"}`               |
//! | GET    | `/v1/timelines`      | `?topic=&start=&end=&smoothing=&...`  |
//!
//! Every route except health needs `Authorization: Bearer <token>`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{bail, Context, Result};
use axum::extract::{FromRequestParts, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{Duration, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use stancetrack_core::analytics::{build_timeline, Bucketing, CaseCounts, DayWindow, EventMarker, TimelinePayload, TimelineQuery};
use stancetrack_core::codebook::{Axis, Codebook, LabelValues, Violation};
use stancetrack_core::harness::{BackendRegistry, ClassScorer};
use stancetrack_core::ingest::{CorpusStore, Post};
use stancetrack_core::labeling::{agreement, Agreement, ClaimOutcome, LabelError, LabelRecord, LabelStore, LeaseBook, Prefilter, SubmitError};
use stancetrack_core::sieve::{ClassifiedCorpus, ClassifiedPost};

use crate::config::ServiceConfig;

pub const PORT_ENV: &str = "STANCETRACK_PORT";
pub const DATA_DIR_ENV: &str = "STANCETRACK_DATA_DIR";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_DATA_DIR: &str = "stancetrack-data";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const GOLD_FILE: &str = "gold.jsonl";

/// Classified posts plus overlays, fixed for the lifetime of the service.
pub struct TimelineSource {
    pub classified: Vec<ClassifiedPost>,
    pub cases: Option<CaseCounts>,
    pub markers: Vec<EventMarker>,
}

impl TimelineSource {
    pub fn payload(&self, query: &TimelineQuery, codebook: &Codebook) -> Result<TimelinePayload, stancetrack_core::analytics::AnalyticsError> {
        build_timeline(&self.classified, query, self.cases.as_ref(), &self.markers, codebook)
    }
}

struct Labels {
    store: LabelStore,
    leases: LeaseBook,
    log: File,
}

pub struct AppState {
    codebook: Codebook,
    pool: Vec<Post>,
    tokens: HashMap<String, String>,
    prefilter: Option<Prefilter>,
    seed: u64,
    data_dir: PathBuf,
    labels: Mutex<Labels>,
    timelines: Option<TimelineSource>,
}

impl AppState {
    /// Loads the pool, replays stored labels and gold from `data_dir`, and
    /// prepares the prefilter and the timeline source.
    pub fn open(config: &ServiceConfig, data_dir: &Path, registry: &BackendRegistry) -> Result<Self> {
        let codebook = crate::config::load_codebook(config.codebook.as_deref())?;
        let pool = CorpusStore::new(&config.corpus).load().with_context(|| format!("loading {}", config.corpus.display()))?;
        if config.tokens.is_empty() {
            bail!("no annotator tokens configured");
        }
        let mut store = LabelStore::new(codebook.clone(), pool.iter().map(|p| p.id.clone()));
        fs::create_dir_all(data_dir)?;
        let labels_path = data_dir.join(LABELS_FILE);
        if labels_path.exists() {
            let n = store.import_labels(BufReader::new(File::open(&labels_path)?))?;
            tracing::info!(records = n, "replayed labels");
        }
        let gold_path = data_dir.join(GOLD_FILE);
        if gold_path.exists() {
            store.import_gold(BufReader::new(File::open(&gold_path)?))?;
        }
        let prefilter = match &config.prefilter {
            Some(r) => {
                let (card, model) = r.load(registry)?;
                let threshold = card
                    .decision_threshold
                    .with_context(|| format!("{} has no decision threshold", r.card.display()))?;
                Some(Prefilter {
                    scorer: Arc::new(ClassScorer::relevance(model)?),
                    threshold,
                })
            }
            None => None,
        };
        let timelines = match &config.classified {
            Some(path) => {
                let overlays = config.overlays();
                Some(TimelineSource {
                    classified: ClassifiedCorpus::load(path)?.posts,
                    cases: overlays.case_counts()?,
                    markers: overlays.markers(),
                })
            }
            None => None,
        };
        let log = OpenOptions::new().create(true).append(true).open(&labels_path)?;
        Ok(Self {
            codebook,
            pool,
            tokens: config.tokens.iter().map(|(t, a)| (t.clone(), a.clone())).collect(),
            prefilter,
            seed: config.seed,
            data_dir: data_dir.to_path_buf(),
            labels: Mutex::new(Labels {
                store,
                leases: LeaseBook::new(Duration::seconds(config.lease_seconds as i64), config.mode),
                log,
            }),
            timelines,
        })
    }

    fn labels(&self) -> std::sync::MutexGuard<'_, Labels> {
        self.labels.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/codebook", get(codebook))
        .route("/v1/claim", post(claim))
        .route("/v1/labels", post(submit))
        .route("/v1/agreement", get(agreement_summary))
        .route("/v1/disagreements", get(disagreements))
        .route("/v1/resolve", post(resolve))
        .route("/v1/timelines", get(timelines))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            violations: Vec::new(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<LabelError> for ApiError {
    fn from(e: LabelError) -> Self {
        match e {
            LabelError::Invalid(violations) => ApiError {
                violations,
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_label", "label violates the codebook")
            },
            LabelError::UnknownPost(_) | LabelError::Unlabeled(_) => ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()),
            LabelError::ResolutionRequired { .. } => ApiError::new(StatusCode::CONFLICT, "resolution_required", e.to_string()),
            LabelError::InvalidBatchSize => ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

/// The annotator behind the request's bearer token.
pub struct Annotator(pub String);

impl FromRequestParts<Arc<AppState>> for Annotator {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &Arc<AppState>) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim);
        match token.and_then(|t| state.tokens.get(t)) {
            Some(annotator) => Ok(Annotator(annotator.clone())),
            None => Err(ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or unknown bearer token")),
        }
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let labels = state.labels();
    Json(json!({
        "status": "ok",
        "codebook_version": state.codebook.version,
        "pool": state.pool.len(),
        "records": labels.store.records().count(),
        "gold": labels.store.gold().count(),
        "prefilter": state.prefilter.is_some(),
        "timelines_ready": state.timelines.is_some(),
    }))
}

async fn codebook(State(state): State<Arc<AppState>>, _: Annotator) -> Json<Codebook> {
    Json(state.codebook.clone())
}

fn first_round() -> u32 {
    1
}

fn default_count() -> usize {
    10
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimRequest {
    #[serde(default = "first_round")]
    pub round: u32,
    #[serde(default = "default_count")]
    pub count: usize,
}

async fn claim(
    State(state): State<Arc<AppState>>,
    Annotator(annotator): Annotator,
    Json(req): Json<ClaimRequest>,
) -> Result<Json<ClaimOutcome>, ApiError> {
    let state = state.clone();
    // prefilter scoring may be slow
    tokio::task::spawn_blocking(move || {
        let mut guard = state.labels();
        let labels = &mut *guard;
        let outcome = labels.leases.claim(
            &state.pool,
            &labels.store,
            &annotator,
            req.round,
            req.count,
            state.seed,
            state.prefilter.as_ref(),
            Utc::now(),
        )?;
        Ok(Json(outcome))
    })
    .await
    .map_err(internal)?
}

#[derive(Debug, Deserialize)]
pub struct SubmitRequest {
    pub post_id: String,
    #[serde(default = "first_round")]
    pub round: u32,
    #[serde(flatten)]
    pub values: LabelValues,
    /// Review submissions need no lease.
    #[serde(default)]
    pub review: bool,
}

async fn submit(
    State(state): State<Arc<AppState>>,
    Annotator(annotator): Annotator,
    Json(req): Json<SubmitRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let now = Utc::now();
    let record = LabelRecord {
        post_id: req.post_id,
        annotator_id: annotator.clone(),
        round: req.round,
        values: req.values,
        labeled_at: now,
    };
    let line = serde_json::to_string(&record).map_err(internal)?;
    let mut guard = state.labels();
    let labels = &mut *guard;
    let key = labels
        .leases
        .submit(&mut labels.store, &annotator, record, now, req.review)
        .map_err(|e| match e {
            SubmitError::NoLease { .. } => ApiError::new(StatusCode::CONFLICT, "no_lease", e.to_string()),
            SubmitError::AnnotatorMismatch { .. } => ApiError::new(StatusCode::FORBIDDEN, "forbidden", e.to_string()),
            SubmitError::Label(e) => e.into(),
        })?;
    writeln!(labels.log, "{line}").and_then(|_| labels.log.flush()).map_err(internal)?;
    Ok(Json(json!({"status": "ok", "key": key})))
}

#[derive(Debug, Deserialize)]
pub struct RoundQuery {
    #[serde(default = "first_round")]
    pub round: u32,
}

async fn agreement_summary(
    State(state): State<Arc<AppState>>,
    _: Annotator,
    Query(q): Query<RoundQuery>,
) -> Json<serde_json::Value> {
    let labels = state.labels();
    let axes: BTreeMap<Axis, Agreement> = Axis::ALL.iter().map(|&a| (a, agreement(&labels.store, q.round, a))).collect();
    Json(json!({"round": q.round, "axes": axes}))
}

#[derive(Debug, Serialize)]
struct Disagreement {
    post_id: String,
    text: String,
    records: Vec<AnnotatorValues>,
}

#[derive(Debug, Serialize)]
struct AnnotatorValues {
    annotator_id: String,
    #[serde(flatten)]
    values: LabelValues,
}

/// Posts of the round whose annotators disagree and that have no gold yet,
/// with every annotator's values side by side.
async fn disagreements(State(state): State<Arc<AppState>>, _: Annotator, Query(q): Query<RoundQuery>) -> Json<serde_json::Value> {
    let labels = state.labels();
    let mut by_post: BTreeMap<&str, Vec<&LabelRecord>> = BTreeMap::new();
    for r in labels.store.records_in_round(q.round) {
        by_post.entry(r.post_id.as_str()).or_default().push(r);
    }
    let texts: HashMap<&str, &str> = state.pool.iter().map(|p| (p.id.as_str(), p.text.as_str())).collect();
    let posts: Vec<Disagreement> = by_post
        .into_iter()
        .filter(|(post, records)| labels.store.gold_for(post).is_none() && records.iter().any(|r| r.values != records[0].values))
        .map(|(post, records)| Disagreement {
            post_id: post.to_string(),
            text: texts.get(post).copied().unwrap_or_default().to_string(),
            records: records
                .into_iter()
                .map(|r| AnnotatorValues {
                    annotator_id: r.annotator_id.clone(),
                    values: r.values.clone(),
                })
                .collect(),
        })
        .collect();
    Json(json!({"round": q.round, "posts": posts}))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveRequest {
    pub post_id: String,
    #[serde(default)]
    pub values: Option<LabelValues>,
}

async fn resolve(
    State(state): State<Arc<AppState>>,
    Annotator(resolver): Annotator,
    Json(req): Json<ResolveRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let mut labels = state.labels();
    if !labels.store.knows_post(&req.post_id) {
        return Err(LabelError::UnknownPost(req.post_id).into());
    }
    let gold = labels.store.resolve_gold(&req.post_id, req.values, &resolver)?;
    let tmp = state.data_dir.join(format!("{GOLD_FILE}.tmp"));
    let mut out = File::create(&tmp).map_err(internal)?;
    labels.store.export_gold(&mut out).map_err(internal)?;
    out.sync_all().map_err(internal)?;
    fs::rename(&tmp, state.data_dir.join(GOLD_FILE)).map_err(internal)?;
    Ok(Json(json!(gold)))
}

/// Flat query-string form of [`TimelineQuery`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineParams {
    pub topic: Option<String>,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub smoothing: Option<usize>,
    pub axis: Option<Axis>,
    pub drop_not_applicable: Option<bool>,
    pub bucketing: Option<Bucketing>,
}

impl TimelineParams {
    pub fn into_query(self) -> TimelineQuery {
        let d = TimelineQuery::default();
        TimelineQuery {
            topic: self.topic.unwrap_or(d.topic),
            window: DayWindow {
                start: self.start,
                end: self.end,
            },
            smoothing: self.smoothing.unwrap_or(d.smoothing),
            axis: self.axis.unwrap_or(d.axis),
            drop_not_applicable: self.drop_not_applicable.unwrap_or(d.drop_not_applicable),
            bucketing: self.bucketing.unwrap_or(d.bucketing),
        }
    }
}

async fn timelines(
    State(state): State<Arc<AppState>>,
    _: Annotator,
    query: Result<Query<TimelineParams>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<TimelinePayload>, ApiError> {
    let Query(params) = query.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text()))?;
    let Some(source) = &state.timelines else {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "no classified corpus is loaded"));
    };
    source
        .payload(&params.into_query(), &state.codebook)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bad_query", e.to_string()))
}

/// Port from [`PORT_ENV`], else [`DEFAULT_PORT`].
pub fn port_from_env() -> Result<u16> {
    match std::env::var(PORT_ENV) {
        Ok(v) => v.parse().with_context(|| format!("{PORT_ENV}={v:?} is not a port")),
        Err(_) => Ok(DEFAULT_PORT),
    }
}

pub fn data_dir_from_env() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from)
}

pub async fn serve(state: Arc<AppState>, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving /v1");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

