use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassifiedPost, Pipeline, SieveError, StageOutput};

/// The classified form of a corpus, one record per post. Posts removed by
/// the relevance sieve are kept with their score.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassifiedCorpus {
    pub posts: Vec<ClassifiedPost>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total: usize,
    pub relevant: usize,
    pub removed: usize,
    pub per_topic: BTreeMap<String, usize>,
    pub measure_support: usize,
    pub government_support: usize,
}

fn sums_to_one(out: &StageOutput) -> bool {
    let sum: f64 = out.probabilities.values().sum();
    (sum - 1.0).abs() <= 1e-6 && out.probabilities.contains_key(&out.label)
}

impl ClassifiedCorpus {
    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn summary(&self) -> CorpusSummary {
        let mut s = CorpusSummary {
            total: self.posts.len(),
            ..Default::default()
        };
        for p in &self.posts {
            if p.relevant {
                s.relevant += 1;
            } else {
                s.removed += 1;
            }
            if let Some(t) = p.topic_label() {
                *s.per_topic.entry(t.to_string()).or_default() += 1;
            }
            s.measure_support += usize::from(p.measure_support.is_some());
            s.government_support += usize::from(p.government_support.is_some());
        }
        s
    }

    /// Checks the cascade invariants against the pipeline that produced this
    /// corpus: unique ids, the threshold partition, stage fields present iff
    /// the post reached that stage, and normalized probabilities.
    pub fn check_cascade(&self, pipeline: &Pipeline) -> Result<(), String> {
        let mut seen = HashSet::new();
        for p in &self.posts {
            let id = &p.post_id;
            if !seen.insert(id.as_str()) {
                return Err(format!("post {id} appears twice"));
            }
            if !(0.0..=1.0).contains(&p.relevance_score) {
                return Err(format!("post {id}: relevance score {} outside [0, 1]", p.relevance_score));
            }
            if p.relevant != (p.relevance_score >= pipeline.threshold) {
                return Err(format!("post {id}: relevant flag disagrees with the threshold"));
            }
            if p.topic.is_some() != p.relevant {
                return Err(format!("post {id}: topic present iff relevant"));
            }
            let supported = p.topic_label().is_some_and(|t| pipeline.support_applies(t));
            if p.measure_support.is_some() != (supported && pipeline.measure_support.is_some()) {
                return Err(format!("post {id}: measure support present iff the topic is targeted"));
            }
            if p.government_support.is_some() != (supported && pipeline.government_support.is_some()) {
                return Err(format!("post {id}: government support present iff the topic is targeted"));
            }
            let stages = [&p.topic, &p.measure_support, &p.government_support];
            if stages.iter().copied().flatten().any(|o| !sums_to_one(o)) {
                return Err(format!("post {id}: probabilities do not sum to 1"));
            }
            let reached = 1 + stages.iter().filter(|s| s.is_some()).count();
            if p.model_fingerprints.len() != reached {
                return Err(format!("post {id}: {} fingerprints for {reached} stages", p.model_fingerprints.len()));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        for p in &self.posts {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Writes the corpus atomically to `path`.
    pub fn save(&self, path: &Path) -> Result<(), SieveError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        self.write_to(File::create(&tmp)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<Self, SieveError> {
        let mut posts = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            posts.push(serde_json::from_str(&line).map_err(|e| SieveError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?);
        }
        Ok(Self { posts })
    }

    pub fn load(path: &Path) -> Result<Self, SieveError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{pipeline, post};
    use super::*;

    #[test]
    fn round_trip_and_summary() {
        let posts = vec![
            post("a", "score=0.9 #curfew !too-loose"),
            post("b", "score=0.7 #masks"),
            post("c", "score=0.2"),
        ];
        let p = pipeline();
        let corpus = ClassifiedCorpus {
            posts: p.classify_batch(&posts).unwrap(),
        };
        corpus.check_cascade(&p).unwrap();
        let s = corpus.summary();
        assert_eq!((s.total, s.relevant, s.removed, s.measure_support), (3, 2, 1, 1));
        assert_eq!(s.per_topic["curfew"], 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("classified.jsonl");
        corpus.save(&path).unwrap();
        assert_eq!(ClassifiedCorpus::load(&path).unwrap(), corpus);

        let mut broken = corpus.clone();
        broken.posts[1].measure_support = broken.posts[0].measure_support.clone();
        assert!(broken.check_cascade(&p).is_err());
        let mut broken = corpus.clone();
        broken.posts[2].topic = broken.posts[1].topic.clone();
        assert!(broken.check_cascade(&p).is_err());
    }

    #[test]
    fn parse_error_has_line_number() {
        let err = ClassifiedCorpus::read_from("\n{oops\n".as_bytes()).unwrap_err();
        assert!(matches!(err, SieveError::Parse { line: 2, .. }));
    }
}
