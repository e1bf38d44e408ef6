use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chunk::DocChunk;
use super::embed::{Embedder, EmbeddingVector};
use super::CorpusError;

pub const INDEX_FORMAT_VERSION: u32 = 1;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk_id: usize,
    pub score: f64,
}

/// Exact cosine index over a fixed set of chunks. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    dim: usize,
    embedder_fingerprint: String,
    chunks: Vec<DocChunk>,
    vectors: Vec<EmbeddingVector>,
}

/// On-disk layout. Header fields come first so a reader can check the
/// version before touching the payload.
#[derive(Serialize)]
struct IndexFileRef<'a> {
    format_version: u32,
    dim: usize,
    count: usize,
    embedder_fingerprint: &'a str,
    chunks: &'a [DocChunk],
    vectors: &'a [EmbeddingVector],
}

#[derive(Deserialize)]
struct IndexFile {
    format_version: u32,
    dim: usize,
    count: usize,
    embedder_fingerprint: String,
    chunks: Vec<DocChunk>,
    vectors: Vec<EmbeddingVector>,
}

/// Max-heap entry whose top is the worst retained candidate.
#[derive(PartialEq)]
struct Candidate(ScoredChunk);

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .score
            .total_cmp(&self.0.score)
            .then(self.0.chunk_id.cmp(&other.0.chunk_id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RetrievalIndex {
    /// Embeds every chunk and renumbers chunk ids to `0..n`.
    pub fn build(chunks: Vec<DocChunk>, embedder: &dyn Embedder) -> Result<Self, CorpusError> {
        if chunks.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let dim = embedder.dim();
        let mut vectors = Vec::with_capacity(chunks.len());
        let mut renumbered = Vec::with_capacity(chunks.len());
        for (id, mut chunk) in chunks.into_iter().enumerate() {
            let vector = embedder.embed(&chunk.text)?;
            if vector.dim() != dim {
                return Err(CorpusError::EmbedderMismatch {
                    expected: format!("dim {dim}"),
                    found: format!("dim {}", vector.dim()),
                });
            }
            chunk.chunk_id = id;
            renumbered.push(chunk);
            vectors.push(vector);
        }
        Ok(Self {
            dim,
            embedder_fingerprint: embedder.fingerprint(),
            chunks: renumbered,
            vectors,
        })
    }

    /// Assembles an index from precomputed vectors, checking every invariant
    /// a loaded file must satisfy.
    pub fn from_parts(
        embedder_fingerprint: impl Into<String>,
        dim: usize,
        chunks: Vec<DocChunk>,
        vectors: Vec<EmbeddingVector>,
    ) -> Result<Self, CorpusError> {
        let corrupt = |msg: String| Err(CorpusError::CorruptIndex(msg));
        if dim == 0 {
            return corrupt("dim must be positive".into());
        }
        if chunks.len() != vectors.len() {
            return corrupt(format!(
                "{} chunks but {} vectors",
                chunks.len(),
                vectors.len()
            ));
        }
        for (i, (chunk, vector)) in chunks.iter().zip(&vectors).enumerate() {
            if chunk.chunk_id != i {
                return corrupt(format!("chunk at position {i} has id {}", chunk.chunk_id));
            }
            if vector.dim() != dim {
                return corrupt(format!("vector {i} has dim {}, expected {dim}", vector.dim()));
            }
            if (vector.norm() - 1.0).abs() > NORM_TOLERANCE {
                return corrupt(format!("vector {i} is not unit length"));
            }
        }
        Ok(Self {
            dim,
            embedder_fingerprint: embedder_fingerprint.into(),
            chunks,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedder_fingerprint(&self) -> &str {
        &self.embedder_fingerprint
    }

    pub fn chunks(&self) -> &[DocChunk] {
        &self.chunks
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn chunk(&self, chunk_id: usize) -> Option<&DocChunk> {
        self.chunks.get(chunk_id)
    }

    pub fn search(
        &self,
        embedder: &dyn Embedder,
        query: &str,
        k: usize,
    ) -> Result<Vec<ScoredChunk>, CorpusError> {
        if embedder.fingerprint() != self.embedder_fingerprint {
            return Err(CorpusError::EmbedderMismatch {
                expected: self.embedder_fingerprint.clone(),
                found: embedder.fingerprint(),
            });
        }
        if query.trim().is_empty() {
            return Err(CorpusError::EmptyQuery);
        }
        let q = embedder.embed(query).map_err(|e| match e {
            CorpusError::EmptyText => CorpusError::EmptyQuery,
            other => other,
        })?;
        self.search_vector(&q, k)
    }

    /// Top-`k` by cosine similarity, ties broken by ascending chunk id.
    /// Returns `min(k, len)` results.
    pub fn search_vector(
        &self,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<ScoredChunk>, CorpusError> {
        if k == 0 {
            return Err(CorpusError::InvalidK);
        }
        if query.dim() != self.dim {
            return Err(CorpusError::EmbedderMismatch {
                expected: format!("dim {}", self.dim),
                found: format!("dim {}", query.dim()),
            });
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (chunk_id, v) in self.vectors.iter().enumerate() {
            heap.push(Candidate(ScoredChunk {
                chunk_id,
                score: v.dot(query),
            }));
            if heap.len() > k {
                heap.pop();
            }
        }
        Ok(heap.into_sorted_vec().into_iter().map(|c| c.0).collect())
    }

    pub fn to_json(&self) -> String {
        let file = IndexFileRef {
            format_version: INDEX_FORMAT_VERSION,
            dim: self.dim,
            count: self.chunks.len(),
            embedder_fingerprint: &self.embedder_fingerprint,
            chunks: &self.chunks,
            vectors: &self.vectors,
        };
        let mut s = serde_json::to_string(&file).expect("index serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CorpusError::CorruptIndex(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| CorpusError::CorruptIndex("missing format_version".into()))?;
        if version != u64::from(INDEX_FORMAT_VERSION) {
            return Err(CorpusError::VersionMismatch {
                expected: INDEX_FORMAT_VERSION,
                found: version,
            });
        }
        let file: IndexFile =
            serde_json::from_value(value).map_err(|e| CorpusError::CorruptIndex(e.to_string()))?;
        if file.count != file.chunks.len() {
            return Err(CorpusError::CorruptIndex(format!(
                "header count {} but {} chunks",
                file.count,
                file.chunks.len()
            )));
        }
        debug_assert_eq!(file.format_version, INDEX_FORMAT_VERSION);
        Self::from_parts(file.embedder_fingerprint, file.dim, file.chunks, file.vectors)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json()).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_json(&text)
    }
}
