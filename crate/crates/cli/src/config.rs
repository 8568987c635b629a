use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use stancetrack_core::analytics::{default_markers, load_case_counts, CaseCounts, EventMarker, TimelineQuery};
use stancetrack_core::codebook::Codebook;
use stancetrack_core::harness::{SearchSpace, SplitSizes};
use stancetrack_core::labeling::AnnotationMode;
use stancetrack_core::sieve::ModelRef;

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

pub fn load_codebook(path: Option<&Path>) -> Result<Codebook> {
    match path {
        Some(p) => Codebook::load(p).with_context(|| format!("loading codebook {}", p.display())),
        None => Ok(Codebook::default()),
    }
}

fn yes() -> bool {
    true
}

/// Inputs of `train` and `evaluate`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Post store holding the texts of every gold post.
    pub corpus: PathBuf,
    /// Gold labels, one JSON object per line.
    pub gold: PathBuf,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    /// Split sizes; by default up to 100 test posts, a tenth of the rest
    /// for validation and the remainder for training.
    #[serde(default)]
    pub split: Option<SplitSizes>,
    #[serde(default = "yes")]
    pub stratify: bool,
    #[serde(default)]
    pub oversample: Option<bool>,
    /// Restricts support-task examples to these gold topics.
    #[serde(default)]
    pub topics: Option<Vec<String>>,
    /// Search space; the backend default when absent.
    #[serde(default)]
    pub space: Option<SearchSpace>,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Self = read_toml(path)?;
        let base = base_dir(path);
        resolve(base, &mut c.corpus);
        resolve(base, &mut c.gold);
        if let Some(p) = c.codebook.as_mut() {
            resolve(base, p);
        }
        Ok(c)
    }

    pub fn sizes(&self, pool: usize) -> SplitSizes {
        self.split.unwrap_or_else(|| default_sizes(pool))
    }
}

pub fn default_sizes(pool: usize) -> SplitSizes {
    let test = (pool / 5).min(100);
    let validation = (pool - test) / 10;
    SplitSizes {
        train: pool - test - validation,
        validation,
        test,
    }
}

/// Case counts and event markers drawn with the timelines.
#[derive(Debug, Clone, Default)]
pub struct Overlays {
    pub cases: Option<PathBuf>,
    /// Replaces the built-in markers when given.
    pub markers: Option<Vec<EventMarker>>,
}

impl Overlays {
    pub fn case_counts(&self) -> Result<Option<CaseCounts>> {
        self.cases
            .as_deref()
            .map(|p| load_case_counts(p).with_context(|| format!("loading case counts {}", p.display())))
            .transpose()
    }

    pub fn markers(&self) -> Vec<EventMarker> {
        self.markers.clone().unwrap_or_else(default_markers)
    }
}

/// Inputs of `timeline`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineConfig {
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub query: TimelineQuery,
    #[serde(default)]
    pub cases: Option<PathBuf>,
    #[serde(default)]
    pub markers: Option<Vec<EventMarker>>,
}

impl TimelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Self = read_toml(path)?;
        let base = base_dir(path);
        for p in [c.codebook.as_mut(), c.cases.as_mut()].into_iter().flatten() {
            resolve(base, p);
        }
        Ok(c)
    }

    pub fn overlays(&self) -> Overlays {
        Overlays {
            cases: self.cases.clone(),
            markers: self.markers.clone(),
        }
    }
}

fn lease_seconds() -> u64 {
    15 * 60
}

fn default_seed() -> u64 {
    0
}

/// Settings of `label-serve`.
///
/// ```toml
/// corpus = "corpus.jsonl"
/// lease_seconds = 900
/// mode = "single"
/// classified = "classified.jsonl"
/// cases = "cases.csv"
///
/// [tokens]
/// "secret-token-a" = "alice"
///
/// [prefilter]
/// card = "models/relevance/card.json"
/// sha256 = "…"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    /// Posts offered for labeling.
    pub corpus: PathBuf,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    /// Bearer token to annotator id.
    pub tokens: BTreeMap<String, String>,
    #[serde(default = "lease_seconds")]
    pub lease_seconds: u64,
    #[serde(default)]
    pub mode: AnnotationMode,
    /// Relevance model screening posts before labeling; its card supplies
    /// the threshold.
    #[serde(default)]
    pub prefilter: Option<ModelRef>,
    /// Classified corpus served by the timeline endpoint.
    #[serde(default)]
    pub classified: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub cases: Option<PathBuf>,
    #[serde(default)]
    pub markers: Option<Vec<EventMarker>>,
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut c: Self = read_toml(path)?;
        let base = base_dir(path);
        resolve(base, &mut c.corpus);
        for p in [c.codebook.as_mut(), c.classified.as_mut(), c.cases.as_mut()].into_iter().flatten() {
            resolve(base, p);
        }
        if let Some(r) = c.prefilter.as_mut() {
            resolve(base, &mut r.card);
        }
        Ok(c)
    }

    pub fn overlays(&self) -> Overlays {
        Overlays {
            cases: self.cases.clone(),
            markers: self.markers.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sizes_cover_the_pool() {
        for n in [0, 7, 100, 1518, 20_000] {
            let s = default_sizes(n);
            assert_eq!(s.total(), n);
            assert!(s.test <= 100);
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("serve.toml");
        fs::write(
            &path,
            "corpus = \"posts.jsonl\"\nclassified = \"/abs/c.jsonl\"\ncases = \"cases.csv\"\n[tokens]\nt = \"alice\"\n",
        )
        .unwrap();
        let c = ServiceConfig::load(&path).unwrap();
        assert_eq!(c.corpus, dir.path().join("posts.jsonl"));
        assert_eq!(c.classified.as_deref(), Some(Path::new("/abs/c.jsonl")));
        assert_eq!(c.cases, Some(dir.path().join("cases.csv")));
        assert_eq!(c.lease_seconds, 900);
        assert!(c.markers.is_none());
    }

    #[test]
    fn unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.toml");
        fs::write(&path, "corpus = \"a\"\ngold = \"b\"\nepochs = 3\n").unwrap();
        assert!(TrainConfig::load(&path).is_err());
    }
}
