mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::http::{Method, StatusCode};
use serde_json::Value;

use common::*;
use stancetrack_core::analytics::TimelinePayload;
use stancetrack_core::harness::Task;
use stancetrack_core::ingest::CorpusStore;
use stancetrack_core::sieve::{ClassifiedCorpus, ModelRef, PipelineConfig};
use stancetrack_core::synth::{raw_stream, simulate_labels};

fn stancetrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stancetrack"))
        .args(args)
        .env_remove("STANCETRACK_ENCODER_DIR")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = stancetrack(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_nonzero() {
    for args in [
        vec!["frobnicate"],
        vec!["timeline", "--input", "x", "--colour", "red"],
        vec![],
    ] {
        let out = stancetrack(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"), "{args:?}");
    }
    let out = stancetrack(&["train", "--task", "weather"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("weather"));
    let out = stancetrack(&["sieve", "--input", "posts.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

/// Ingests a synthetic stream, writes gold labels and trains every task.
fn trained() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let ws = Workspace {
        root: dir.path().to_path_buf(),
        _dir: dir,
    };
    let corpus = synthetic(2400, 17);
    let raw: String = raw_stream(&corpus, 5)
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    fs::write(ws.path("raw.jsonl"), raw).unwrap();
    let report = ok(&["ingest", "--input", s(&ws.path("raw.jsonl")), "--out", s(&ws.path("posts.jsonl"))]);
    assert_eq!(report["stats"]["total"], 2400, "{report}");
    let posts = CorpusStore::new(ws.path("posts.jsonl")).load().unwrap();
    assert_eq!(posts.len(), 2400);

    let store = simulate_labels(&corpus[..1200], &codebook(), &["a1", "a2"], 0.05, 9).unwrap();
    let mut gold = Vec::new();
    store.export_gold(&mut gold).unwrap();
    fs::write(ws.path("gold.jsonl"), gold).unwrap();
    fs::write(ws.path("train.toml"), "corpus = \"posts.jsonl\"\ngold = \"gold.jsonl\"\n").unwrap();

    for task in Task::ALL {
        let out = ws.path(&format!("models/{}", task.as_str()));
        let card = ok(&[
            "train", "--config", s(&ws.path("train.toml")), "--task", task.as_str(), "--runs", "2", "--seed", "3", "--out", s(&out),
        ]);
        assert_eq!(card["task"], task.as_str());
        assert_eq!(fs::read_to_string(out.join("runs.jsonl")).unwrap().lines().count(), 2);
    }
    let card = |t: Task| ModelRef::for_card(&ws.path(&format!("models/{}/card.json", t.as_str()))).unwrap();
    let config = PipelineConfig {
        relevance: card(Task::Relevance),
        threshold: None,
        topic: card(Task::Topic),
        support: [Task::MeasureSupport, Task::GovernmentSupport].into_iter().map(|t| (t, card(t))).collect(),
        target_topics: ["curfew".to_string()].into(),
        support_on_all_relevant: false,
        batch_size: 200,
        checkpoint: None,
    };
    fs::write(ws.path("pipeline.toml"), config.to_toml()).unwrap();
    ws
}

#[tokio::test(flavor = "multi_thread")]
async fn ingest_train_sieve_timeline_export() {
    let ws = trained();
    let train = ws.path("train.toml");

    let report = ok(&["evaluate", "--config", s(&train), "--model", s(&ws.path("models/relevance/card.json")), "--seed", "3"]);
    assert!(report["accuracy"].as_f64().unwrap() > 0.9, "{report}");
    let wrong = stancetrack(&["evaluate", "--config", s(&train), "--model", s(&ws.path("models/relevance/card.json")), "--seed", "4"]);
    assert!(!wrong.status.success());

    let pipeline = ws.path("pipeline.toml");
    let posts = ws.path("posts.jsonl");
    let checkpoint = ws.path("sieve.ckpt");
    let resumed = ws.path("classified.jsonl");
    let args = |out: &Path, max: Option<&'static str>| {
        let mut v = vec![
            "sieve".to_string(),
            "--config".into(),
            s(&pipeline).into(),
            "--input".into(),
            s(&posts).into(),
            "--checkpoint".into(),
            s(&checkpoint).into(),
            "--out".into(),
            s(out).into(),
        ];
        if let Some(m) = max {
            v.extend(["--max-batches".to_string(), m.to_string()]);
        }
        v
    };
    let run = |v: Vec<String>| stancetrack(&v.iter().map(String::as_str).collect::<Vec<_>>());
    let killed = run(args(&resumed, Some("3")));
    assert!(!killed.status.success());
    assert!(String::from_utf8_lossy(&killed.stderr).contains("resume"));
    assert!(!resumed.exists());
    let killed = run(args(&resumed, Some("3")));
    assert!(!killed.status.success());
    let finished = run(args(&resumed, None));
    assert!(finished.status.success(), "{}", String::from_utf8_lossy(&finished.stderr));
    let summary: Value = serde_json::from_slice(&finished.stdout).unwrap();
    assert_eq!(summary["total"], 2400);

    let fresh = ws.path("fresh.jsonl");
    ok(&["sieve", "--config", s(&pipeline), "--input", s(&posts), "--out", s(&fresh)]);
    assert_eq!(fs::read(&resumed).unwrap(), fs::read(&fresh).unwrap());

    fs::write(ws.path("timeline.toml"), "[query]\ntopic = \"curfew\"\nsmoothing = 7\n").unwrap();
    let timeline = ws.path("timeline.json");
    let out = stancetrack(&["timeline", "--config", s(&ws.path("timeline.toml")), "--input", s(&resumed), "--out", s(&timeline)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cli: TimelinePayload = serde_json::from_str(&fs::read_to_string(&timeline).unwrap()).unwrap();

    let mut config = service_config(posts.clone());
    config.classified = Some(resumed.clone());
    let app = app(&config, &ws.path("data"));
    let (status, body) = call(&app, Method::GET, "/v1/timelines?topic=curfew&smoothing=7", Some(ALICE), None).await;
    assert_eq!(status, StatusCode::OK);
    let served: TimelinePayload = serde_json::from_value(body).unwrap();
    assert_eq!(served, cli);
    assert!(ClassifiedCorpus::load(&resumed).unwrap().posts.len() == 2400);

    let files = ok(&["export", "--input", s(&timeline), "--out", s(&ws.path("figure/curfew"))]);
    let data = PathBuf::from(files["data"].as_str().unwrap());
    let figure = PathBuf::from(files["figure"].as_str().unwrap());
    assert!(fs::read_to_string(&data).unwrap().lines().count() > 30);
    assert!(fs::read_to_string(&figure).unwrap().starts_with("<svg"));
}
