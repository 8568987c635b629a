use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Example, HarnessError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    pub seed: u64,
    pub stratified: bool,
}

impl DatasetSplit {
    /// SHA-256 over the (part, id, label) triples.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (part, items) in [("train", &self.train), ("validation", &self.validation), ("test", &self.test)] {
            let mut keys: Vec<_> = items.iter().map(|e| (&e.id, &e.label)).collect();
            keys.sort();
            for (id, label) in keys {
                h.update(part.as_bytes());
                h.update([0]);
                h.update(id.as_bytes());
                h.update([0]);
                h.update(label.as_bytes());
                h.update([b'\n']);
            }
        }
        hex::encode(h.finalize())
    }
}

/// Draws disjoint train/validation/test sets of exactly the requested sizes.
///
/// With `stratify`, every part receives each class in proportion to the
/// pool, off by less than one item: the per-(part, class) quotas are a
/// controlled rounding of the exact proportional table, so they add up to
/// both the part sizes and the class counts.
pub fn split_dataset(pool: &[Example], sizes: SplitSizes, seed: u64, stratify: bool) -> Result<DatasetSplit, HarnessError> {
    let available = pool.len();
    if sizes.total() > available {
        return Err(HarnessError::PoolTooSmall {
            required: sizes.total(),
            available,
        });
    }
    let mut seen = HashSet::with_capacity(available);
    if let Some(dup) = pool.iter().find(|e| !seen.insert(e.id.as_str())) {
        return Err(HarnessError::DuplicateId(dup.id.clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let part_sizes = [sizes.train, sizes.validation, sizes.test, available - sizes.total()];
    let mut parts: [Vec<Example>; 4] = Default::default();

    let mut by_class: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
    for e in pool {
        by_class.entry(e.label.as_str()).or_default().push(e);
    }
    if stratify {
        let counts: Vec<usize> = by_class.values().map(Vec::len).collect();
        let quotas = controlled_rounding(&part_sizes, &counts);
        for (c, items) in by_class.values_mut().enumerate() {
            items.sort_by(|a, b| a.id.cmp(&b.id));
            items.shuffle(&mut rng);
            let mut rest = items.as_slice();
            for (p, part) in parts.iter_mut().enumerate() {
                let (take, tail) = rest.split_at(quotas[p][c]);
                part.extend(take.iter().map(|e| (*e).clone()));
                rest = tail;
            }
        }
        for part in parts.iter_mut() {
            part.sort_by(|a, b| a.id.cmp(&b.id));
            part.shuffle(&mut rng);
        }
    } else {
        let mut items: Vec<&Example> = pool.iter().collect();
        items.sort_by(|a, b| a.id.cmp(&b.id));
        items.shuffle(&mut rng);
        let mut rest = items.as_slice();
        for (p, part) in parts.iter_mut().enumerate() {
            let (take, tail) = rest.split_at(part_sizes[p]);
            part.extend(take.iter().map(|e| (*e).clone()));
            rest = tail;
        }
    }
    let [train, validation, test, _unused] = parts;
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        stratified: stratify,
    })
}

/// Integer table `a[p][c]` with row sums `rows[p]`, column sums `cols[c]`
/// and every cell equal to floor or ceil of `rows[p] * cols[c] / N`.
///
/// Cells start at the floor; the remaining units are placed by a maximum
/// flow from rows to columns over the cells with a fractional part. Such a
/// rounding always exists for a table with integer margins.
pub(crate) fn controlled_rounding(rows: &[usize], cols: &[usize]) -> Vec<Vec<usize>> {
    let n: usize = cols.iter().sum();
    debug_assert_eq!(rows.iter().sum::<usize>(), n);
    let mut table: Vec<Vec<usize>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| if n == 0 { 0 } else { r * c / n }).collect())
        .collect();
    if n == 0 {
        return table;
    }
    let (np, nc) = (rows.len(), cols.len());
    // nodes: 0 source, 1..=np rows, np+1..=np+nc columns, np+nc+1 sink
    let sink = np + nc + 1;
    let mut cap = vec![vec![0i64; sink + 1]; sink + 1];
    for p in 0..np {
        cap[0][1 + p] = (rows[p] - table[p].iter().sum::<usize>()) as i64;
        for c in 0..nc {
            if rows[p] * cols[c] % n != 0 {
                cap[1 + p][1 + np + c] = 1;
            }
        }
    }
    for c in 0..nc {
        let placed: usize = table.iter().map(|row| row[c]).sum();
        cap[1 + np + c][sink] = (cols[c] - placed) as i64;
    }
    let original = cap.clone();
    while let Some(path) = augmenting_path(&cap, 0, sink) {
        for w in path.windows(2) {
            cap[w[0]][w[1]] -= 1;
            cap[w[1]][w[0]] += 1;
        }
    }
    for p in 0..np {
        for c in 0..nc {
            let (u, v) = (1 + p, 1 + np + c);
            if original[u][v] == 1 && cap[u][v] == 0 {
                table[p][c] += 1;
            }
        }
    }
    table
}

fn augmenting_path(cap: &[Vec<i64>], source: usize, sink: usize) -> Option<Vec<usize>> {
    let mut prev = vec![usize::MAX; cap.len()];
    let mut queue = std::collections::VecDeque::from([source]);
    prev[source] = source;
    while let Some(u) = queue.pop_front() {
        if u == sink {
            let mut path = vec![sink];
            let mut v = sink;
            while v != source {
                v = prev[v];
                path.push(v);
            }
            path.reverse();
            return Some(path);
        }
        for v in 0..cap.len() {
            if cap[u][v] > 0 && prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    None
}
