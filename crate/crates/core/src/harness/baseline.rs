//! Hashed n-gram features with a multinomial logistic regression trained by
//! minibatch SGD. Deterministic given the hyperparameters.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::{BackendError, ClassifierBackend, ClassifierModel};
use super::search::{Domain, SearchSpace};
use super::{Example, HyperParams};

pub const BACKEND_ID: &str = "hashed-ngram";
const DEFAULT_DIM_LOG2: u32 = 18;

#[derive(Debug, Clone, Default)]
pub struct HashedNgramBackend;

type Features = Vec<(u32, f32)>;

fn hash_feature(kind: u8, parts: &[&str], mask: u32) -> u32 {
    let mut h = FnvHasher::default();
    h.write_u8(kind);
    for p in parts {
        h.write(p.as_bytes());
        h.write_u8(0xff);
    }
    (h.finish() as u32) & mask
}

/// Word unigrams, word bigrams and character trigrams of each word (with
/// boundary markers), hashed into `2^dim_log2` buckets and L2-normalized.
pub fn featurize(text: &str, dim_log2: u32) -> Features {
    let mask = (1u32 << dim_log2) - 1;
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let mut counts: HashMap<u32, f32> = HashMap::new();
    for (i, w) in words.iter().enumerate() {
        *counts.entry(hash_feature(b'w', &[w], mask)).or_default() += 1.0;
        if i > 0 {
            *counts.entry(hash_feature(b'b', &[words[i - 1], w], mask)).or_default() += 1.0;
        }
        let chars: Vec<char> = std::iter::once('<').chain(w.chars()).chain(std::iter::once('>')).collect();
        for tri in chars.windows(3) {
            let s: String = tri.iter().collect();
            *counts.entry(hash_feature(b'c', &[&s], mask)).or_default() += 0.5;
        }
    }
    let norm = counts.values().map(|v| v * v).sum::<f32>().sqrt();
    let mut feats: Features = counts.into_iter().map(|(i, v)| (i, v / norm)).collect();
    feats.sort_unstable_by_key(|f| f.0);
    feats
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashedNgramModel {
    classes: Vec<String>,
    dim_log2: u32,
    /// Set when training saw a single class: always predict it.
    constant: Option<usize>,
    bias: Vec<f32>,
    /// Row-major `[bucket][class]`.
    weights: Vec<f32>,
}

/// On-disk form: only buckets with a nonzero weight are kept.
#[derive(Serialize, Deserialize)]
struct StoredModel {
    classes: Vec<String>,
    dim_log2: u32,
    constant: Option<usize>,
    bias: Vec<f32>,
    rows: Vec<(u32, Vec<f32>)>,
}

impl HashedNgramModel {
    fn logits(&self, feats: &Features) -> Vec<f32> {
        let k = self.classes.len();
        let mut z = self.bias.clone();
        for &(i, x) in feats {
            let row = &self.weights[i as usize * k..(i as usize + 1) * k];
            for (zc, wc) in z.iter_mut().zip(row) {
                *zc += wc * x;
            }
        }
        z
    }

    fn probabilities(&self, feats: &Features) -> Vec<f64> {
        if let Some(c) = self.constant {
            return (0..self.classes.len()).map(|i| if i == c { 1.0 } else { 0.0 }).collect();
        }
        softmax(&self.logits(feats))
    }
}

fn softmax(z: &[f32]) -> Vec<f64> {
    let max = z.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = z.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

impl ClassifierModel for HashedNgramModel {
    fn backend_id(&self) -> &str {
        BACKEND_ID
    }

    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.probabilities(&featurize(t, self.dim_log2))).collect())
    }

    fn to_bytes(&self) -> Result<Vec<u8>, BackendError> {
        let k = self.classes.len();
        let rows = self
            .weights
            .chunks(k)
            .enumerate()
            .filter(|(_, r)| r.iter().any(|w| *w != 0.0))
            .map(|(i, r)| (i as u32, r.to_vec()))
            .collect();
        let stored = StoredModel {
            classes: self.classes.clone(),
            dim_log2: self.dim_log2,
            constant: self.constant,
            bias: self.bias.clone(),
            rows,
        };
        serde_json::to_vec(&stored).map_err(|e| BackendError::Artifact(e.to_string()))
    }
}

impl ClassifierBackend for HashedNgramBackend {
    fn id(&self) -> &str {
        BACKEND_ID
    }

    fn default_space(&self) -> SearchSpace {
        SearchSpace {
            learning_rate: Domain::LogUniform { low: 0.1, high: 2.0 },
            batch_size: Domain::choice([8i64, 16, 32]),
            epochs: Domain::IntRange { low: 3, high: 12 },
            extras: BTreeMap::new(),
        }
    }

    fn fit(&self, train: &[Example], classes: &[String], hp: &HyperParams) -> Result<Box<dyn ClassifierModel>, BackendError> {
        if train.is_empty() {
            return Err(BackendError::Training("empty training set".into()));
        }
        if classes.is_empty() {
            return Err(BackendError::Training("no classes".into()));
        }
        let dim_log2 = hp.extra_f64("dim_log2").map(|d| d as u32).unwrap_or(DEFAULT_DIM_LOG2);
        if !(8..=24).contains(&dim_log2) {
            return Err(BackendError::Training(format!("dim_log2 {dim_log2} outside 8..=24")));
        }
        let l2 = hp.extra_f64("l2").unwrap_or(0.0) as f32;
        let k = classes.len();
        let data: Vec<(Features, usize)> = train
            .iter()
            .map(|e| {
                let y = classes
                    .iter()
                    .position(|c| *c == e.label)
                    .ok_or_else(|| BackendError::Training(format!("label {:?} is not a class", e.label)))?;
                Ok((featurize(&e.text, dim_log2), y))
            })
            .collect::<Result<_, BackendError>>()?;

        let mut model = HashedNgramModel {
            classes: classes.to_vec(),
            dim_log2,
            constant: None,
            bias: vec![0.0; k],
            weights: vec![0.0; (1usize << dim_log2) * k],
        };
        let first = data[0].1;
        if data.iter().all(|(_, y)| *y == first) {
            model.constant = Some(first);
            model.weights.clear();
            return Ok(Box::new(model));
        }

        let lr = hp.learning_rate as f32;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..hp.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hp.batch_size) {
                let scale = lr / batch.len() as f32;
                let mut updates: Vec<(usize, f32, Vec<f32>)> = Vec::with_capacity(batch.len());
                let mut bias_grad = vec![0.0f32; k];
                for &idx in batch {
                    let (feats, y) = &data[idx];
                    let p = softmax(&model.logits(feats));
                    let g: Vec<f32> = p.iter().enumerate().map(|(c, &pc)| pc as f32 - (c == *y) as u8 as f32).collect();
                    for (b, gc) in bias_grad.iter_mut().zip(&g) {
                        *b += gc;
                    }
                    updates.push((idx, scale, g));
                }
                for (idx, scale, g) in updates {
                    for &(i, x) in &data[idx].0 {
                        let row = &mut model.weights[i as usize * k..(i as usize + 1) * k];
                        for (w, gc) in row.iter_mut().zip(&g) {
                            *w -= scale * (gc * x + l2 * *w);
                        }
                    }
                }
                for (b, gc) in model.bias.iter_mut().zip(&bias_grad) {
                    *b -= scale * gc;
                }
            }
        }
        Ok(Box::new(model))
    }

    fn load(&self, bytes: &[u8]) -> Result<Box<dyn ClassifierModel>, BackendError> {
        let stored: StoredModel = serde_json::from_slice(bytes).map_err(|e| BackendError::Artifact(e.to_string()))?;
        let k = stored.classes.len();
        if k == 0 || stored.bias.len() != k || !(8..=24).contains(&stored.dim_log2) {
            return Err(BackendError::Artifact("weight shape does not match classes".into()));
        }
        let buckets = if stored.constant.is_some() { 0 } else { 1usize << stored.dim_log2 };
        let mut weights = vec![0.0; buckets * k];
        for (i, row) in stored.rows {
            let start = i as usize * k;
            if row.len() != k || start + k > weights.len() {
                return Err(BackendError::Artifact(format!("weight row {i} out of range")));
            }
            weights[start..start + k].copy_from_slice(&row);
        }
        Ok(Box::new(HashedNgramModel {
            classes: stored.classes,
            dim_log2: stored.dim_log2,
            constant: stored.constant,
            bias: stored.bias,
            weights,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::backend::check_probabilities;

    fn hp(seed: u64) -> HyperParams {
        HyperParams {
            learning_rate: 0.5,
            batch_size: 8,
            epochs: 8,
            seed,
            extras: BTreeMap::from([("dim_log2".to_string(), 14i64.into())]),
        }
    }

    fn keyword_data() -> Vec<Example> {
        let fillers = ["vandaag", "morgen", "iedereen", "nieuws", "stad", "avond", "regels", "mensen"];
        (0..80)
            .map(|i| {
                let label = if i % 2 == 0 { "yes" } else { "no" };
                let key = if label == "yes" { "avondklok" } else { "vaccin" };
                Example {
                    id: format!("e{i}"),
                    text: format!("{} {} {} {}", fillers[i % 8], key, fillers[(i / 3) % 8], fillers[(i / 5) % 8]),
                    label: label.into(),
                }
            })
            .collect()
    }

    fn classes() -> Vec<String> {
        vec!["yes".into(), "no".into()]
    }

    #[test]
    fn features_are_unit_norm_and_sorted() {
        let f = featurize("De avondklok wordt verlengd! #avondklok", 16);
        let norm: f32 = f.iter().map(|(_, v)| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!(f.windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(featurize("AVONDKLOK", 16), featurize("avondklok", 16));
    }

    #[test]
    fn learns_a_planted_keyword() {
        let data = keyword_data();
        let model = HashedNgramBackend.fit(&data[..60], &classes(), &hp(1)).unwrap();
        let texts: Vec<&str> = data[60..].iter().map(|e| e.text.as_str()).collect();
        let probs = model.predict_proba(&texts).unwrap();
        check_probabilities(&probs, texts.len(), 2).unwrap();
        for (p, e) in probs.iter().zip(&data[60..]) {
            let predicted = if p[0] > p[1] { "yes" } else { "no" };
            assert_eq!(predicted, e.label);
        }
    }

    #[test]
    fn single_class_training_is_constant() {
        let data: Vec<Example> = keyword_data().into_iter().filter(|e| e.label == "no").collect();
        let model = HashedNgramBackend.fit(&data, &classes(), &hp(1)).unwrap();
        let probs = model.predict_proba(&["avondklok avondklok", "iets totaal anders"]).unwrap();
        assert!(probs.iter().all(|p| p == &vec![0.0, 1.0]));
    }

    #[test]
    fn training_is_deterministic_and_round_trips() {
        let data = keyword_data();
        let a = HashedNgramBackend.fit(&data, &classes(), &hp(3)).unwrap();
        let b = HashedNgramBackend.fit(&data, &classes(), &hp(3)).unwrap();
        assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let loaded = HashedNgramBackend.load(&a.to_bytes().unwrap()).unwrap();
        let t = ["avondklok nu", "vaccin later"];
        assert_eq!(loaded.predict_proba(&t).unwrap(), a.predict_proba(&t).unwrap());
        assert_eq!(loaded.fingerprint(), a.fingerprint());
    }

    #[test]
    fn unknown_label_fails_training() {
        let mut data = keyword_data();
        data[0].label = "maybe".into();
        assert!(HashedNgramBackend.fit(&data, &classes(), &hp(1)).is_err());
    }
}
