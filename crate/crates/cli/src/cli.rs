use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stancetrack_core::analytics::{export_timeline, DataFormat, TimelinePayload};
use stancetrack_core::codebook::Codebook;
use stancetrack_core::harness::{
    evaluate, examples_for_task, random_search, split_dataset, BackendRegistry, DatasetSplit, Example, ModelCard, RunRegistry,
    SearchConfig, Task,
};
use stancetrack_core::ingest::{ingest, CorpusStore, IngestQuery, Post};
use stancetrack_core::labeling::{GoldLabel, LabelStore};
use stancetrack_core::sieve::{run_pipeline, ClassifiedCorpus, PipelineConfig, RunControl, SieveError};
use stancetrack_encoder::EncoderBackend;

use crate::config::{load_codebook, ServiceConfig, TimelineConfig, TrainConfig};
use crate::service::{self, AppState, TimelineSource};

#[derive(Debug, Parser)]
#[command(name = "stancetrack", version, about = "Collect, label, classify and chart opinions in short posts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Command configuration file (TOML)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

impl Common {
    fn out(&self, what: &str) -> Result<&Path> {
        self.out.as_deref().with_context(|| format!("--out <{what}> is required"))
    }

    fn config(&self, what: &str) -> Result<&Path> {
        self.config.as_deref().with_context(|| format!("--config <{what}> is required"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter raw records into the post store at --out
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Line-delimited raw records; `-` reads stdin
        #[arg(long)]
        input: PathBuf,
    },
    /// Serve the /v1 labeling and timeline endpoints
    LabelServe {
        #[command(flatten)]
        common: Common,
    },
    /// Random hyperparameter search for one task; writes a model card to --out
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        task: Task,
        /// Number of configurations; the task default when absent
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long, default_value = stancetrack_core::harness::baseline::BACKEND_ID)]
        backend: String,
    },
    /// Score a trained model on its held-out test split or on other gold labels
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Model card to evaluate
        #[arg(long)]
        model: PathBuf,
        /// Gold labels to evaluate on instead of the test split
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Run the classifier cascade over a post store
    Sieve {
        #[command(flatten)]
        common: Common,
        /// Post store to classify
        #[arg(long)]
        input: PathBuf,
        /// Resume file; completed batches are not recomputed
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        /// Stop after this many batches
        #[arg(long, hide = true)]
        max_batches: Option<usize>,
    },
    /// Aggregate a classified corpus into timeline series
    Timeline {
        #[command(flatten)]
        common: Common,
        /// Classified corpus
        #[arg(long)]
        input: PathBuf,
    },
    /// Write timeline data and the three-panel figure
    Export {
        #[command(flatten)]
        common: Common,
        /// Timeline payload written by `timeline`
        #[arg(long)]
        input: PathBuf,
        /// Data file format: tsv or json
        #[arg(long, default_value = "tsv")]
        format: String,
    },
}

fn registry() -> Result<BackendRegistry> {
    let mut r = BackendRegistry::with_baseline();
    r.register(Arc::new(EncoderBackend::from_env()?));
    Ok(r)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    write_json(value, None)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { common, input } => run_ingest(&common, &input),
        Command::LabelServe { common } => run_serve(&common),
        Command::Train { common, task, runs, backend } => run_train(&common, task, runs, &backend),
        Command::Evaluate { common, model, labels } => run_evaluate(&common, &model, labels.as_deref()),
        Command::Sieve {
            common,
            input,
            checkpoint,
            codebook,
            max_batches,
        } => run_sieve(&common, &input, checkpoint, codebook.as_deref(), max_batches),
        Command::Timeline { common, input } => run_timeline(&common, &input),
        Command::Export { common, input, format } => run_export(&common, &input, &format),
    }
}

fn run_ingest(common: &Common, input: &Path) -> Result<()> {
    let query = match &common.config {
        Some(p) => IngestQuery::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => IngestQuery::default(),
    };
    let store = CorpusStore::new(common.out("post store")?);
    let source: Box<dyn BufRead> = if input == Path::new("-") {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(File::open(input).with_context(|| format!("opening {}", input.display()))?))
    };
    let report = ingest(source, &query, &store)?;
    print_json(&report)
}

fn run_serve(common: &Common) -> Result<()> {
    let config = ServiceConfig::load(common.config("service config")?)?;
    let data_dir = common.out.clone().unwrap_or_else(service::data_dir_from_env);
    let port = service::port_from_env()?;
    let mut config = config;
    if common.seed != 0 {
        config.seed = common.seed;
    }
    let state = Arc::new(AppState::open(&config, &data_dir, &registry()?)?);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(service::serve(state, port))
}

/// Gold labels joined with post texts.
pub struct TrainingData {
    pub codebook: Codebook,
    pub posts: Vec<Post>,
    pub gold: Vec<GoldLabel>,
}

impl TrainingData {
    pub fn load(config: &TrainConfig) -> Result<Self> {
        let codebook = load_codebook(config.codebook.as_deref())?;
        let posts = CorpusStore::new(&config.corpus).load()?;
        let gold = read_gold(&config.gold, &codebook, &posts)?;
        Ok(Self { codebook, posts, gold })
    }

    pub fn examples(&self, config: &TrainConfig, task: Task) -> Vec<Example> {
        examples_for_task(&self.gold, &self.posts, task, config.topics.as_deref())
    }

    /// The deterministic split `train` uses for `task` and `seed`.
    pub fn split(&self, config: &TrainConfig, task: Task, seed: u64) -> Result<DatasetSplit> {
        let examples = self.examples(config, task);
        let sizes = config.sizes(examples.len());
        Ok(split_dataset(&examples, sizes, seed, config.stratify)?)
    }
}

fn read_gold(path: &Path, codebook: &Codebook, posts: &[Post]) -> Result<Vec<GoldLabel>> {
    let mut store = LabelStore::new(codebook.clone(), posts.iter().map(|p| p.id.clone()));
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    store.import_gold(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    Ok(store.gold().cloned().collect())
}

fn run_train(common: &Common, task: Task, runs: Option<usize>, backend: &str) -> Result<()> {
    let config = TrainConfig::load(common.config("train config")?)?;
    let out = common.out("model directory")?;
    let data = TrainingData::load(&config)?;
    let split = data.split(&config, task, common.seed)?;
    let backend = registry()?.get(backend)?;
    let mut search = SearchConfig::for_task(task, common.seed);
    if let Some(n) = runs {
        search.runs = n;
    }
    search.space = config.space.clone();
    search.oversample = config.oversample;
    let outcome = random_search(backend.as_ref(), &split, &task.classes(&data.codebook), &search)?;
    let (card, path) = ModelCard::write(&outcome.classifier, out, &data.codebook.version, &split.fingerprint())?;
    RunRegistry::new(out.join("runs.jsonl")).append(&outcome.runs)?;
    tracing::info!(card = %path.display(), "model written");
    print_json(&card)
}

fn run_evaluate(common: &Common, card_path: &Path, labels: Option<&Path>) -> Result<()> {
    let config = TrainConfig::load(common.config("train config")?)?;
    let card = ModelCard::load(card_path)?;
    let model = card.load_model(card_path, &registry()?)?;
    let data = TrainingData::load(&config)?;
    let examples = match labels {
        Some(path) => {
            let gold = read_gold(path, &data.codebook, &data.posts)?;
            examples_for_task(&gold, &data.posts, card.task, config.topics.as_deref())
        }
        None => {
            let split = data.split(&config, card.task, common.seed)?;
            if split.fingerprint() != card.dataset_fingerprint {
                bail!(
                    "the split from {} with seed {} is not the one {} was trained on",
                    common.config.as_deref().unwrap_or(Path::new("")).display(),
                    common.seed,
                    card_path.display()
                );
            }
            split.test
        }
    };
    let report = evaluate(model.as_ref(), &examples)?;
    write_json(&report, common.out.as_deref())
}

fn run_sieve(
    common: &Common,
    input: &Path,
    checkpoint: Option<PathBuf>,
    codebook: Option<&Path>,
    max_batches: Option<usize>,
) -> Result<()> {
    let config = PipelineConfig::load(common.config("pipeline config")?)?;
    let out = common.out("classified corpus")?;
    let codebook = load_codebook(codebook)?;
    let pipeline = config.build(&registry()?, &codebook)?;
    let posts = CorpusStore::new(input).load()?;
    let control = RunControl {
        checkpoint: checkpoint.or(config.checkpoint),
        max_batches,
        ..Default::default()
    };
    let classified = match run_pipeline(&posts, &pipeline, &codebook, &control) {
        Err(e @ SieveError::Interrupted { .. }) => {
            return Err(anyhow::Error::new(e).context("rerun with the same --checkpoint to resume"));
        }
        other => other?,
    };
    classified.save(out)?;
    print_json(&classified.summary())
}

pub fn timeline_source(config: &TimelineConfig, input: &Path) -> Result<TimelineSource> {
    let overlays = config.overlays();
    Ok(TimelineSource {
        classified: ClassifiedCorpus::load(input).with_context(|| format!("loading {}", input.display()))?.posts,
        cases: overlays.case_counts()?,
        markers: overlays.markers(),
    })
}

fn run_timeline(common: &Common, input: &Path) -> Result<()> {
    let config = match &common.config {
        Some(p) => TimelineConfig::load(p)?,
        None => TimelineConfig::default(),
    };
    let codebook = load_codebook(config.codebook.as_deref())?;
    let payload = timeline_source(&config, input)?.payload(&config.query, &codebook)?;
    write_json(&payload, common.out.as_deref())
}

fn run_export(common: &Common, input: &Path, format: &str) -> Result<()> {
    let format: DataFormat = format.parse()?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let payload: TimelinePayload = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
    let files = export_timeline(&payload.data, common.out("output base path")?, format)?;
    print_json(&serde_json::json!({"data": files.data, "figure": files.figure}))
}
