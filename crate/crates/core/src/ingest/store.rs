use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{IngestError, Post};

/// Line-delimited post store sorted by `(created_at, id)`.
#[derive(Debug, Clone)]
pub struct CorpusStore {
    path: PathBuf,
}

impl CorpusStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Loads every post. A missing file is an empty store.
    pub fn load(&self) -> Result<Vec<Post>, IngestError> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        read_posts(BufReader::new(File::open(&self.path)?))
    }

    /// Replaces the store content atomically with `posts` in canonical order.
    pub fn write<'a>(&self, posts: impl IntoIterator<Item = &'a Post>) -> std::io::Result<()> {
        let mut sorted: Vec<&Post> = posts.into_iter().collect();
        sorted.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = self.path.with_extension("tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            for post in sorted {
                writeln!(out, "{}", post.to_line())?;
            }
            out.flush()?;
        }
        fs::rename(tmp, &self.path)
    }
}

/// Reads canonical post lines. Any unreadable line is an error: the store
/// holds only validated posts.
pub fn read_posts<R: BufRead>(reader: R) -> Result<Vec<Post>, IngestError> {
    let mut posts = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let post = serde_json::from_str(&line).map_err(|e| IngestError::Unreadable {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        posts.push(post);
    }
    Ok(posts)
}

/// Inserts `post`, keeping the earliest `created_at` per id. Exact timestamp
/// ties keep the lexicographically smaller serialization so the result does
/// not depend on arrival order.
pub(super) fn merge_post(posts: &mut HashMap<String, Post>, post: Post) -> bool {
    match posts.get(&post.id) {
        Some(existing) => {
            let replace = (post.created_at, post.to_line()) < (existing.created_at, existing.to_line());
            if replace {
                posts.insert(post.id.clone(), post);
            }
            false
        }
        None => {
            posts.insert(post.id.clone(), post);
            true
        }
    }
}

/// Removes duplicate ids from the store, keeping the earliest post per id.
/// Returns the number of records removed.
pub fn dedupe(store: &CorpusStore) -> Result<usize, IngestError> {
    let posts = store.load()?;
    let before = posts.len();
    let mut unique = HashMap::with_capacity(before);
    for post in posts {
        merge_post(&mut unique, post);
    }
    store.write(unique.values())?;
    Ok(before - unique.len())
}
