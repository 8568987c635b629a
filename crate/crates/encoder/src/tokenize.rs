use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use tokenizers::Tokenizer;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
const RESERVED: u32 = 3;

/// Token ids plus attention mask for one text, padded to a fixed length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<u32>,
    pub mask: Vec<u32>,
}

/// Maps lowercased words into a fixed number of buckets. Used when no
/// pretrained vocabulary is available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashedTokenizer {
    pub vocab_size: u32,
}

impl HashedTokenizer {
    pub fn token_id(&self, word: &str) -> u32 {
        let mut h = FnvHasher::default();
        h.write(word.as_bytes());
        RESERVED + (h.finish() % u64::from(self.vocab_size - RESERVED)) as u32
    }

    pub fn ids(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![CLS_ID];
        ids.extend(
            text.split(|c: char| !(c.is_alphanumeric() || c == '#' || c == '@' || c == '-' || c == '\''))
                .filter(|w| !w.is_empty())
                .map(|w| self.token_id(&w.to_lowercase())),
        );
        ids.push(SEP_ID);
        ids
    }
}

#[derive(Clone)]
pub enum TextEncoder {
    Hashed(HashedTokenizer),
    Pretrained { tokenizer: Box<Tokenizer>, json: String, pad_id: u32 },
}

impl TextEncoder {
    pub fn pretrained(json: String) -> Result<Self, String> {
        let tokenizer: Tokenizer = json.parse().map_err(|e| format!("tokenizer.json: {e}"))?;
        let pad_id = ["[PAD]", "<pad>"].iter().find_map(|t| tokenizer.token_to_id(t)).unwrap_or(0);
        Ok(TextEncoder::Pretrained {
            tokenizer: Box::new(tokenizer),
            json,
            pad_id,
        })
    }

    fn pad_id(&self) -> u32 {
        match self {
            TextEncoder::Hashed(_) => PAD_ID,
            TextEncoder::Pretrained { pad_id, .. } => *pad_id,
        }
    }

    pub fn encode(&self, text: &str, max_len: usize) -> Result<Encoded, String> {
        let mut ids = match self {
            TextEncoder::Hashed(h) => h.ids(text),
            TextEncoder::Pretrained { tokenizer, .. } => tokenizer.encode(text, true).map_err(|e| e.to_string())?.get_ids().to_vec(),
        };
        if ids.len() > max_len {
            // keep the closing separator
            let last = *ids.last().expect("nonempty");
            ids.truncate(max_len);
            ids[max_len - 1] = last;
        }
        let mut mask = vec![1; ids.len()];
        ids.resize(max_len, self.pad_id());
        mask.resize(max_len, 0);
        Ok(Encoded { ids, mask })
    }
}
