use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassifiedCorpus, ClassifiedPost, Pipeline, SieveError};
use crate::codebook::Codebook;
use crate::ingest::Post;

/// Checkpointing and interruption controls for [`run_pipeline`].
#[derive(Debug, Clone, Default)]
pub struct RunControl {
    /// Completed batches are appended here and skipped on restart.
    pub checkpoint: Option<PathBuf>,
    /// Stop with [`SieveError::Interrupted`] after computing this many new
    /// batches.
    pub max_batches: Option<usize>,
    /// Checked between waves of batches.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Batches classified concurrently; 0 means one per worker thread.
    pub parallelism: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    checkpoint: String,
    run: String,
    batches: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BatchLine {
    batch: usize,
    posts: Vec<ClassifiedPost>,
}

const CHECKPOINT_KIND: &str = "sieve-checkpoint/1";

/// Identifies the models, settings and corpus of a run; a checkpoint from
/// another run is refused.
fn run_fingerprint(corpus: &[Post], pipeline: &Pipeline) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(pipeline.codebook_version.as_bytes());
    field(&pipeline.threshold.to_bits().to_le_bytes());
    for stage in pipeline.stages() {
        field(stage.task.as_str().as_bytes());
        field(stage.fingerprint.as_bytes());
    }
    for t in &pipeline.target_topics {
        field(t.as_bytes());
    }
    field(&[u8::from(pipeline.support_on_all_relevant)]);
    field(&(pipeline.batch_size as u64).to_le_bytes());
    for p in corpus {
        field(p.id.as_bytes());
        field(p.text.as_bytes());
        field(&p.created_at.timestamp().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Reads the completed batches of a checkpoint and truncates a partially
/// written final line.
fn resume(path: &Path, header: &Header) -> Result<BTreeMap<usize, Vec<ClassifiedPost>>, SieveError> {
    let mut done = BTreeMap::new();
    let file = File::open(path)?;
    let mut reader = BufReader::new(&file);
    let mut line = String::new();
    let mut offset = 0u64;
    let mut good_end = 0u64;
    let mut n = 0usize;
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        n += 1;
        offset += read as u64;
        let complete = line.ends_with('\n');
        if n == 1 {
            match serde_json::from_str::<Header>(line.trim_end()) {
                Ok(h) if &h == header => {}
                Ok(_) => {
                    return Err(SieveError::Checkpoint(format!(
                        "{} belongs to a different run; remove it to start over",
                        path.display()
                    )))
                }
                Err(_) if !complete => break,
                Err(e) => return Err(SieveError::Checkpoint(format!("unreadable header: {e}"))),
            }
            good_end = offset;
            continue;
        }
        if !complete {
            // a torn final write
            break;
        }
        let b: BatchLine =
            serde_json::from_str(line.trim_end()).map_err(|e| SieveError::Checkpoint(format!("line {n}: {e}")))?;
        if b.batch >= header.batches || done.insert(b.batch, b.posts).is_some() {
            return Err(SieveError::Checkpoint(format!("line {n}: unexpected batch {}", b.batch)));
        }
        good_end = offset;
    }
    if good_end < offset {
        tracing::warn!(path = %path.display(), "dropping a partially written checkpoint line");
        OpenOptions::new().write(true).open(path)?.set_len(good_end)?;
    }
    Ok(done)
}

fn append_line(file: &mut File, value: &impl Serialize) -> Result<(), SieveError> {
    let mut buf = serde_json::to_vec(value).expect("checkpoint line serializes");
    buf.push(b'\n');
    file.write_all(&buf)?;
    file.sync_data()?;
    Ok(())
}

fn open_checkpoint(path: &Path, header: &Header) -> Result<(File, BTreeMap<usize, Vec<ClassifiedPost>>), SieveError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let done = if path.exists() { resume(path, header)? } else { BTreeMap::new() };
    let mut file = OpenOptions::new().create(true).read(true).write(true).open(path)?;
    let end = file.seek(SeekFrom::End(0))?;
    if end == 0 {
        append_line(&mut file, header)?;
    }
    Ok((file, done))
}

#[cfg(feature = "parallel")]
fn classify_wave(pipeline: &Pipeline, batches: &[(usize, &[Post])]) -> Vec<Result<Vec<ClassifiedPost>, SieveError>> {
    use rayon::prelude::*;
    batches.par_iter().map(|(_, posts)| pipeline.classify_batch(posts)).collect()
}

#[cfg(not(feature = "parallel"))]
fn classify_wave(pipeline: &Pipeline, batches: &[(usize, &[Post])]) -> Vec<Result<Vec<ClassifiedPost>, SieveError>> {
    batches.iter().map(|(_, posts)| pipeline.classify_batch(posts)).collect()
}

fn default_parallelism() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Classifies `corpus` through the cascade in batches of
/// `pipeline.batch_size`. Output order follows the corpus. With a
/// checkpoint, a restarted run skips the batches already recorded and
/// produces the same result as an uninterrupted one.
pub fn run_pipeline(
    corpus: &[Post],
    pipeline: &Pipeline,
    codebook: &Codebook,
    control: &RunControl,
) -> Result<ClassifiedCorpus, SieveError> {
    pipeline.check(codebook)?;
    let batches: Vec<(usize, &[Post])> = corpus.chunks(pipeline.batch_size).enumerate().collect();
    let total = batches.len();
    let header = Header {
        checkpoint: CHECKPOINT_KIND.into(),
        run: run_fingerprint(corpus, pipeline),
        batches: total,
    };
    let (mut file, mut done) = match &control.checkpoint {
        Some(path) => {
            let (f, d) = open_checkpoint(path, &header)?;
            (Some(f), d)
        }
        None => (None, BTreeMap::new()),
    };
    if !done.is_empty() {
        tracing::info!(resumed = done.len(), total, "resuming from checkpoint");
    }
    let pending: Vec<(usize, &[Post])> = batches.into_iter().filter(|(i, _)| !done.contains_key(i)).collect();
    let wave = if control.parallelism == 0 { default_parallelism() } else { control.parallelism }.max(1);
    let mut budget = control.max_batches.unwrap_or(usize::MAX);
    for group in pending.chunks(wave) {
        let cancelled = control.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst));
        if budget == 0 || cancelled {
            return Err(SieveError::Interrupted {
                completed: done.len(),
                total,
            });
        }
        let group = &group[..group.len().min(budget)];
        budget -= group.len();
        for ((index, _), result) in group.iter().zip(classify_wave(pipeline, group)) {
            let posts = result?;
            if let Some(f) = file.as_mut() {
                append_line(f, &BatchLine { batch: *index, posts: posts.clone() })?;
            }
            done.insert(*index, posts);
        }
    }
    if done.len() < total {
        return Err(SieveError::Interrupted {
            completed: done.len(),
            total,
        });
    }
    Ok(ClassifiedCorpus {
        posts: done.into_values().flatten().collect(),
    })
}
