#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use stancetrack::config::ServiceConfig;
use stancetrack::service::{router, AppState};
use stancetrack_core::codebook::{Codebook, LabelValues};
use stancetrack_core::harness::BackendRegistry;
use stancetrack_core::ingest::{CorpusStore, Post};
use stancetrack_core::labeling::AnnotationMode;
use stancetrack_core::synth::{generate_corpus, SynthConfig, SyntheticPost};

pub const ALICE: &str = "token-alice";
pub const BOB: &str = "token-bob";

pub fn synthetic(posts: usize, seed: u64) -> Vec<SyntheticPost> {
    generate_corpus(&SynthConfig {
        posts,
        seed,
        ..Default::default()
    })
}

pub fn write_store(path: &Path, posts: &[Post]) -> PathBuf {
    CorpusStore::new(path).write(posts).unwrap();
    path.to_path_buf()
}

pub fn curfew_too_strict() -> LabelValues {
    LabelValues {
        topic: Some("curfew".into()),
        measure_support: "too-strict".into(),
        government_support: "not-applicable".into(),
        relevance: "relevant".into(),
    }
}

pub fn service_config(corpus: PathBuf) -> ServiceConfig {
    ServiceConfig {
        corpus,
        codebook: None,
        tokens: BTreeMap::from([(ALICE.into(), "alice".into()), (BOB.into(), "bob".into())]),
        lease_seconds: 900,
        mode: AnnotationMode::Single,
        prefilter: None,
        classified: None,
        seed: 7,
        cases: None,
        markers: None,
    }
}

pub fn app(config: &ServiceConfig, data_dir: &Path) -> Router {
    router(Arc::new(AppState::open(config, data_dir, &BackendRegistry::with_baseline()).unwrap()))
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into())) };
    (status, value)
}

pub fn codebook() -> Codebook {
    Codebook::default()
}
