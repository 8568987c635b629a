use std::collections::BTreeMap;
use std::time::Instant;

use stancetrack_core::analytics::{build_timeline, Panel, TimelineQuery};
use stancetrack_core::codebook::Codebook;
use stancetrack_core::harness::baseline::HashedNgramBackend;
use stancetrack_core::harness::{examples_for_task, random_search, split_dataset, Clock, SearchConfig, SplitSizes, Task};
use stancetrack_core::ingest::Post;
use stancetrack_core::labeling::GoldLabel;
use stancetrack_core::metrics::ClassAuc;
use stancetrack_core::sieve::{default_target_topics, run_pipeline, Pipeline, RunControl, StageModel};
use stancetrack_core::synth::{generate_corpus, simulate_labels, SynthConfig};
use stancetrack_core::time::parse_instant;

fn sizes(n: usize) -> SplitSizes {
    let test = n / 5;
    let validation = n / 10;
    SplitSizes {
        train: n - test - validation,
        validation,
        test,
    }
}

#[test]
fn synthetic_cascade() {
    let t0 = Instant::now();
    let codebook = Codebook::default();
    let corpus = generate_corpus(&SynthConfig {
        posts: 3000,
        ..Default::default()
    });
    let labeled: Vec<_> = corpus.iter().step_by(3).cloned().collect();
    let store = simulate_labels(&labeled, &codebook, &["a1", "a2"], 0.1, 3).unwrap();
    let gold: Vec<GoldLabel> = store.gold().cloned().collect();
    let posts: Vec<Post> = corpus.iter().map(|s| s.post.clone()).collect();

    let mut trained = BTreeMap::new();
    for task in Task::ALL {
        let examples = examples_for_task(&gold, &posts, task, None);
        let split = split_dataset(&examples, sizes(examples.len()), 11, true).unwrap();
        let mut config = SearchConfig::for_task(task, 5);
        config.runs = 3;
        config.clock = Clock::Fixed(parse_instant("2021-04-09T00:00:00Z").unwrap());
        let out = random_search(&HashedNgramBackend, &split, &task.classes(&codebook), &config).unwrap();
        eprintln!("{task}: acc {:.3} ({:?})", out.classifier.report.accuracy, t0.elapsed());
        trained.insert(task, out.classifier);
    }
    let auc = trained[&Task::Relevance].report.per_class_auc["relevant"].value().unwrap();
    assert!(auc >= 0.95, "relevance AUC {auc}");
    assert!(matches!(trained[&Task::Topic].report.per_class_auc["curfew"], ClassAuc::Value(v) if v > 0.9));

    let stage = |t: Task| StageModel::from_trained(&trained[&t], &codebook.version);
    let pipeline = Pipeline {
        codebook_version: codebook.version.clone(),
        relevance: stage(Task::Relevance),
        threshold: trained[&Task::Relevance].decision_threshold().unwrap(),
        topic: stage(Task::Topic),
        measure_support: Some(stage(Task::MeasureSupport)),
        government_support: Some(stage(Task::GovernmentSupport)),
        target_topics: default_target_topics(),
        support_on_all_relevant: false,
        batch_size: 256,
    };
    let classified = run_pipeline(&posts, &pipeline, &codebook, &RunControl::default()).unwrap();
    classified.check_cascade(&pipeline).unwrap();
    let summary = classified.summary();
    assert_eq!(summary.relevant + summary.removed, posts.len());
    assert!(summary.relevant > 0);

    let payload = build_timeline(&classified.posts, &TimelineQuery::default(), None, &[], &codebook).unwrap();
    assert_eq!(payload.data.panel(Panel::Stance, 1).count(), 4);
    eprintln!("total {:?}", t0.elapsed());
}
