//! Fine-tunable BERT classifier backend.
//!
//! With a model directory holding `config.json`, `tokenizer.json` and
//! `model.safetensors` (for instance a multilingual BERT checkpoint) the
//! encoder starts from those weights. Without one it starts from a small
//! randomly initialised BERT over a hashed word vocabulary, which is enough
//! to exercise the training path on a laptop.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, IndexOp, Tensor};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use candle_nn::{Linear, Module, VarBuilder, VarMap};
use candle_transformers::models::bert::{BertModel, Config};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use stancetrack_core::harness::{BackendError, ClassifierBackend, ClassifierModel, Example, HyperParams, SearchSpace};

pub mod tokenize;

use tokenize::{HashedTokenizer, TextEncoder};

pub const BACKEND_ID: &str = "multilingual-encoder";
/// Points at a pretrained model directory.
pub const MODEL_DIR_ENV: &str = "STANCETRACK_ENCODER_DIR";
const MAGIC: &[u8] = b"stenc1\n";
const DEFAULT_MAX_LEN: usize = 64;
const PREDICT_BATCH: usize = 64;

/// Size of the randomly initialised encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyShape {
    pub vocab_size: u32,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate_size: usize,
    pub max_positions: usize,
}

impl Default for TinyShape {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            hidden_size: 64,
            layers: 2,
            heads: 4,
            intermediate_size: 128,
            max_positions: 128,
        }
    }
}

impl TinyShape {
    fn config_json(&self) -> Value {
        serde_json::json!({
            "vocab_size": self.vocab_size,
            "hidden_size": self.hidden_size,
            "num_hidden_layers": self.layers,
            "num_attention_heads": self.heads,
            "intermediate_size": self.intermediate_size,
            "hidden_act": "gelu",
            "hidden_dropout_prob": 0.0,
            "max_position_embeddings": self.max_positions,
            "type_vocab_size": 2,
            "initializer_range": 0.02,
            "layer_norm_eps": 1e-12,
            "pad_token_id": 0,
            "classifier_dropout": null,
            "model_type": "bert",
        })
    }
}

#[derive(Debug, Clone)]
enum Source {
    Tiny(TinyShape),
    Pretrained(PathBuf),
}

#[derive(Debug, Clone)]
pub struct EncoderBackend {
    source: Source,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TokenizerSpec {
    Hashed { vocab_size: u32 },
    Pretrained { json: String },
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    max_len: usize,
    config: Value,
    tokenizer: TokenizerSpec,
}

fn training<E: Display>(e: E) -> BackendError {
    BackendError::Training(e.to_string())
}

fn inference<E: Display>(e: E) -> BackendError {
    BackendError::Inference(e.to_string())
}

fn artifact<E: Display>(e: E) -> BackendError {
    BackendError::Artifact(e.to_string())
}

impl EncoderBackend {
    pub fn tiny(shape: TinyShape) -> Self {
        Self { source: Source::Tiny(shape) }
    }

    /// Uses the checkpoint in `dir`; all three files must be present.
    pub fn pretrained(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        for file in ["config.json", "tokenizer.json", "model.safetensors"] {
            if !dir.join(file).is_file() {
                return Err(artifact(format!("{} is missing {file}", dir.display())));
            }
        }
        Ok(Self { source: Source::Pretrained(dir) })
    }

    /// Pretrained when [`MODEL_DIR_ENV`] is set, tiny otherwise.
    pub fn from_env() -> Result<Self, BackendError> {
        match std::env::var_os(MODEL_DIR_ENV) {
            Some(dir) if !dir.is_empty() => Self::pretrained(dir),
            _ => Ok(Self::tiny(TinyShape::default())),
        }
    }

    pub fn is_pretrained(&self) -> bool {
        matches!(self.source, Source::Pretrained(_))
    }

    fn header(&self, classes: &[String], max_len: usize) -> Result<Header, BackendError> {
        Ok(match &self.source {
            Source::Tiny(shape) => Header {
                classes: classes.to_vec(),
                max_len,
                config: shape.config_json(),
                tokenizer: TokenizerSpec::Hashed { vocab_size: shape.vocab_size },
            },
            Source::Pretrained(dir) => {
                let config = fs::read_to_string(dir.join("config.json")).map_err(artifact)?;
                Header {
                    classes: classes.to_vec(),
                    max_len,
                    config: serde_json::from_str(&config).map_err(artifact)?,
                    tokenizer: TokenizerSpec::Pretrained {
                        json: fs::read_to_string(dir.join("tokenizer.json")).map_err(artifact)?,
                    },
                }
            }
        })
    }
}

impl Default for EncoderBackend {
    fn default() -> Self {
        Self::tiny(TinyShape::default())
    }
}

struct Network {
    bert: BertModel,
    head: Linear,
}

impl Network {
    fn build(varmap: &VarMap, config: &Config, classes: usize) -> candle_core::Result<Self> {
        let vb = VarBuilder::from_varmap(varmap, DType::F32, &Device::Cpu);
        Ok(Self {
            bert: BertModel::load(vb.pp("bert"), config)?,
            head: candle_nn::linear(config.hidden_size, classes, vb.pp("classifier"))?,
        })
    }

    /// Class logits from the first ([CLS]) position.
    fn logits(&self, ids: &Tensor, mask: &Tensor) -> candle_core::Result<Tensor> {
        let types = ids.zeros_like()?;
        let hidden = self.bert.forward(ids, &types, Some(mask))?;
        self.head.forward(&hidden.i((.., 0, ..))?)
    }
}

fn batch(encoded: &[tokenize::Encoded], rows: &[usize]) -> candle_core::Result<(Tensor, Tensor)> {
    let len = encoded.first().map_or(0, |e| e.ids.len());
    let ids: Vec<u32> = rows.iter().flat_map(|&r| encoded[r].ids.iter().copied()).collect();
    let mask: Vec<u32> = rows.iter().flat_map(|&r| encoded[r].mask.iter().copied()).collect();
    Ok((
        Tensor::from_vec(ids, (rows.len(), len), &Device::Cpu)?,
        Tensor::from_vec(mask, (rows.len(), len), &Device::Cpu)?,
    ))
}

/// Normal(0, std) weights, zero biases and unit layer-norm scales, drawn
/// in name order so a seed fixes the starting point.
fn seeded_init(varmap: &VarMap, seed: u64, std: f64) -> candle_core::Result<()> {
    let data = varmap.data().lock().expect("var map lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, std as f32).expect("positive std");
    for name in names {
        let var = &data[name];
        let n = var.elem_count();
        let values: Vec<f32> = if name.ends_with("bias") {
            vec![0.0; n]
        } else if name.contains("LayerNorm") {
            vec![1.0; n]
        } else {
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        var.set(&Tensor::from_vec(values, var.shape(), &Device::Cpu)?)?;
    }
    Ok(())
}

/// Copies checkpoint tensors into the encoder variables. Every encoder
/// variable must be covered; the classification head keeps its seeded
/// values.
fn load_checkpoint(varmap: &VarMap, path: &Path) -> Result<(), BackendError> {
    let tensors = candle_core::safetensors::load(path, &Device::Cpu).map_err(artifact)?;
    let data = varmap.data().lock().expect("var map lock");
    let mut covered = 0;
    for (key, tensor) in tensors {
        let key = key.replace("LayerNorm.gamma", "LayerNorm.weight").replace("LayerNorm.beta", "LayerNorm.bias");
        let name = if key.starts_with("bert.") { key } else { format!("bert.{key}") };
        if let Some(var) = data.get(&name) {
            if var.shape() != tensor.shape() {
                return Err(artifact(format!("{name}: checkpoint shape {:?}, model {:?}", tensor.shape(), var.shape())));
            }
            var.set(&tensor.to_dtype(DType::F32).map_err(artifact)?).map_err(artifact)?;
            covered += 1;
        }
    }
    let expected = data.keys().filter(|k| k.starts_with("bert.")).count();
    if covered != expected {
        return Err(artifact(format!("checkpoint covers {covered} of {expected} encoder tensors")));
    }
    Ok(())
}

impl ClassifierBackend for EncoderBackend {
    fn id(&self) -> &str {
        BACKEND_ID
    }

    fn default_space(&self) -> SearchSpace {
        SearchSpace::encoder_default()
    }

    fn fit(&self, train: &[Example], classes: &[String], hp: &HyperParams) -> Result<Box<dyn ClassifierModel>, BackendError> {
        if train.is_empty() || classes.len() < 2 {
            return Err(training("need training examples and at least two classes"));
        }
        let labels: Vec<u32> = train
            .iter()
            .map(|e| {
                classes
                    .iter()
                    .position(|c| *c == e.label)
                    .map(|i| i as u32)
                    .ok_or_else(|| training(format!("label {:?} of {} is not a class", e.label, e.id)))
            })
            .collect::<Result<_, _>>()?;
        let requested = hp.extra_f64("max_len").map_or(DEFAULT_MAX_LEN, |v| v as usize);
        let model = EncoderModel::new(self.header(classes, requested)?, training)?;
        seeded_init(&model.varmap, hp.seed, model.config.initializer_range).map_err(training)?;
        if let Source::Pretrained(dir) = &self.source {
            load_checkpoint(&model.varmap, &dir.join("model.safetensors"))?;
        }
        let encoded = model.encode(&train.iter().map(|e| e.text.as_str()).collect::<Vec<_>>()).map_err(training)?;

        let mut opt = AdamW::new(
            model.varmap.all_vars(),
            ParamsAdamW {
                lr: hp.learning_rate,
                weight_decay: hp.extra_f64("weight_decay").unwrap_or(0.01),
                ..Default::default()
            },
        )
        .map_err(training)?;
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0x5eed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 0..hp.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for rows in order.chunks(hp.batch_size) {
                let (ids, mask) = batch(&encoded, rows).map_err(training)?;
                let y = Tensor::new(rows.iter().map(|&r| labels[r]).collect::<Vec<u32>>(), &Device::Cpu).map_err(training)?;
                let logits = model.net.logits(&ids, &mask).map_err(training)?;
                let loss = candle_nn::loss::cross_entropy(&logits, &y).map_err(training)?;
                opt.backward_step(&loss).map_err(training)?;
                total += loss.to_scalar::<f32>().map_err(training)? as f64 * rows.len() as f64;
            }
            tracing::debug!(epoch, loss = total / train.len() as f64, "encoder epoch");
        }
        Ok(Box::new(model))
    }

    fn load(&self, bytes: &[u8]) -> Result<Box<dyn ClassifierModel>, BackendError> {
        let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| artifact("not an encoder artifact"))?;
        let (len, rest) = rest.split_at_checked(8).ok_or_else(|| artifact("truncated artifact"))?;
        let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
        let (header, weights) = rest.split_at_checked(len).ok_or_else(|| artifact("truncated artifact"))?;
        let header: Header = serde_json::from_slice(header).map_err(artifact)?;
        let model = EncoderModel::new(header, artifact)?;
        let tensors = candle_core::safetensors::load_buffer(weights, &Device::Cpu).map_err(artifact)?;
        {
            let data = model.varmap.data().lock().expect("var map lock");
            if tensors.len() != data.len() {
                return Err(artifact(format!("artifact has {} tensors, model {}", tensors.len(), data.len())));
            }
            for (name, var) in data.iter() {
                let t = tensors.get(name).ok_or_else(|| artifact(format!("artifact lacks {name}")))?;
                var.set(t).map_err(artifact)?;
            }
        }
        Ok(Box::new(model))
    }
}

pub struct EncoderModel {
    classes: Vec<String>,
    max_len: usize,
    config_json: Value,
    config: Config,
    encoder: TextEncoder,
    varmap: VarMap,
    net: Network,
}

impl EncoderModel {
    fn new(header: Header, err: fn(String) -> BackendError) -> Result<Self, BackendError> {
        let config: Config = serde_json::from_value(header.config.clone()).map_err(|e| err(format!("config: {e}")))?;
        let encoder = match header.tokenizer {
            TokenizerSpec::Hashed { vocab_size } => {
                if vocab_size as usize != config.vocab_size {
                    return Err(err(format!("hashed vocabulary {vocab_size} differs from config {}", config.vocab_size)));
                }
                TextEncoder::Hashed(HashedTokenizer { vocab_size })
            }
            TokenizerSpec::Pretrained { json } => TextEncoder::pretrained(json).map_err(err)?,
        };
        let varmap = VarMap::new();
        let net = Network::build(&varmap, &config, header.classes.len()).map_err(|e| err(e.to_string()))?;
        Ok(Self {
            max_len: header.max_len.clamp(2, config.max_position_embeddings),
            classes: header.classes,
            config_json: header.config,
            config,
            encoder,
            varmap,
            net,
        })
    }

    fn encode(&self, texts: &[&str]) -> Result<Vec<tokenize::Encoded>, String> {
        texts.iter().map(|t| self.encoder.encode(t, self.max_len)).collect()
    }

    fn header(&self) -> Header {
        Header {
            classes: self.classes.clone(),
            max_len: self.max_len,
            config: self.config_json.clone(),
            tokenizer: match &self.encoder {
                TextEncoder::Hashed(h) => TokenizerSpec::Hashed { vocab_size: h.vocab_size },
                TextEncoder::Pretrained { json, .. } => TokenizerSpec::Pretrained { json: json.clone() },
            },
        }
    }
}

impl ClassifierModel for EncoderModel {
    fn backend_id(&self) -> &str {
        BACKEND_ID
    }

    fn classes(&self) -> &[String] {
        &self.classes
    }

    fn predict_proba(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let encoded = self.encode(texts).map_err(inference)?;
        let rows: Vec<usize> = (0..encoded.len()).collect();
        let mut out = Vec::with_capacity(texts.len());
        for chunk in rows.chunks(PREDICT_BATCH) {
            let (ids, mask) = batch(&encoded, chunk).map_err(inference)?;
            let probs = candle_nn::ops::softmax_last_dim(&self.net.logits(&ids, &mask).map_err(inference)?).map_err(inference)?;
            for row in probs.to_vec2::<f32>().map_err(inference)? {
                let row: Vec<f64> = row.into_iter().map(f64::from).collect();
                let sum: f64 = row.iter().sum();
                out.push(row.into_iter().map(|p| p / sum).collect());
            }
        }
        Ok(out)
    }

    fn to_bytes(&self) -> Result<Vec<u8>, BackendError> {
        let header = serde_json::to_vec(&self.header()).map_err(artifact)?;
        let tensors: BTreeMap<String, Tensor> = self
            .varmap
            .data()
            .lock()
            .expect("var map lock")
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        let weights = safetensors::serialize(tensors, None::<HashMap<String, String>>).map_err(artifact)?;
        let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header.len() + weights.len());
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend_from_slice(&weights);
        Ok(bytes)
    }
}
