//! Token embeddings: an optional pretrained table with a hashed
//! character-trigram fallback, so every token gets a vector.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

pub const DEFAULT_DIM: usize = 50;

/// Pretrained word vectors: one token per line followed by `dim` floats.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VectorTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn parse(text: &str, dim: usize) -> Result<Self> {
        let mut vectors = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<core::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Schema(alloc::format!("vector file line {}: {e}", n + 1)))?;
            if values.len() != dim {
                return Err(Error::Schema(alloc::format!(
                    "vector file line {}: expected {dim} values, got {}",
                    n + 1,
                    values.len()
                )));
            }
            vectors.insert(token.to_string(), values);
        }
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbedder {
    dim: usize,
    table: Option<VectorTable>,
}

impl TokenEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim, table: None }
    }

    pub fn with_table(table: VectorTable) -> Self {
        Self {
            dim: table.dim(),
            table: Some(table),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.table.as_ref().and_then(|t| t.get(token)) {
            return v.to_vec();
        }
        trigram_embedding(token, self.dim)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sum of pseudo-random vectors seeded by the hashes of the token's
/// boundary-padded character trigrams, scaled to unit length. The empty
/// token maps to the zero vector.
pub fn trigram_embedding(token: &str, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if token.is_empty() || dim == 0 {
        return out;
    }
    let mut padded = String::with_capacity(token.len() + 2);
    padded.push('#');
    padded.push_str(token);
    padded.push('#');
    let bounds: Vec<usize> = padded
        .char_indices()
        .map(|(i, _)| i)
        .chain(core::iter::once(padded.len()))
        .collect();
    for w in bounds.windows(4) {
        let mut state = fnv1a(&padded.as_bytes()[w[0]..w[3]]);
        for v in out.iter_mut() {
            let bits = splitmix64(&mut state) >> 11;
            *v += bits as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        }
    }
    let norm = math::sqrt(out.iter().map(|v| v * v).sum());
    if norm > 0.0 {
        for v in &mut out {
            *v /= norm;
        }
    }
    out
}
