//! Reference corpus for the verification step: chunking, embedding, and an
//! exact flat cosine index.

mod chunk;
mod embed;
mod index;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use chunk::{chunk_document, ChunkParams, DocChunk, DEFAULT_OVERLAP_WORDS, DEFAULT_WINDOW_WORDS};
pub use embed::{Embedder, EmbeddingVector, HashedTfEmbedder, DEFAULT_EMBED_DIM};
pub use index::{RetrievalIndex, ScoredChunk, INDEX_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document `{0}` contains no words")]
    EmptyDocument(String),
    #[error("invalid chunk parameters: window {window}, overlap {overlap} (need 0 <= overlap < window)")]
    InvalidChunkParams { window: usize, overlap: usize },
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("corpus contains no chunks")]
    EmptyCorpus,
    #[error("query is empty")]
    EmptyQuery,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedder mismatch: index expects {expected}, got {found}")]
    EmbedderMismatch { expected: String, found: String },
    #[error("index format version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u64 },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

fn is_corpus_file(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("md" | "markdown" | "txt")
    )
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CorpusError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if is_corpus_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads every `.md`/`.markdown`/`.txt` file under `dir` (sorted by relative
/// path) and chunks it. Chunk ids are assigned globally in that order.
pub fn load_corpus_dir(dir: &Path, params: ChunkParams) -> Result<Vec<DocChunk>, CorpusError> {
    params.validate()?;
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    let mut docs: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(&p);
            let id = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            (id, p)
        })
        .collect();
    docs.sort();

    let mut chunks = Vec::new();
    for (doc_id, path) in docs {
        let text = std::fs::read_to_string(&path).map_err(|e| CorpusError::io(&path, e))?;
        if text.split_whitespace().next().is_none() {
            tracing::warn!(doc = %doc_id, "skipping empty corpus document");
            continue;
        }
        for mut chunk in chunk_document(&doc_id, &text, params)? {
            chunk.chunk_id = chunks.len();
            chunks.push(chunk);
        }
    }
    if chunks.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(chunks)
}
