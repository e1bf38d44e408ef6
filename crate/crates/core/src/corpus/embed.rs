use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const DEFAULT_EMBED_DIM: usize = 256;

/// An L2-normalized vector. Values are stored as `f32`; similarity math is
/// carried out in `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. Fails on an all-zero or non-finite input.
    pub fn normalized(raw: &[f64]) -> Option<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        Some(Self {
            values: raw.iter().map(|v| (v / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

/// Maps text to a unit vector. The fingerprint must change whenever the
/// mapping changes, since indexes refuse queries from a different embedder.
pub trait Embedder: Send + Sync {
    fn fingerprint(&self) -> String;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, CorpusError>;
}

/// Feature-hashed term frequencies: lowercase word tokens are hashed with
/// 64-bit FNV-1a into `dim` buckets, counted, then L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedTfEmbedder {
    dim: usize,
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

impl HashedTfEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl Embedder for HashedTfEmbedder {
    fn fingerprint(&self) -> String {
        format!("hashed-tf/fnv1a64/dim={}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, CorpusError> {
        let mut counts = vec![0.0f64; self.dim];
        for token in word_tokens(text) {
            let bucket = (fnv1a64(token.as_bytes()) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        EmbeddingVector::normalized(&counts).ok_or(CorpusError::EmptyText)
    }
}
