use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const DEFAULT_WINDOW_WORDS: usize = 256;
pub const DEFAULT_OVERLAP_WORDS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocChunk {
    pub chunk_id: usize,
    pub doc_id: String,
    pub section_path: Vec<String>,
    pub text: String,
    /// Half-open `[start, end)` word offsets into the whole document.
    pub word_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    pub window_words: usize,
    pub overlap_words: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            window_words: DEFAULT_WINDOW_WORDS,
            overlap_words: DEFAULT_OVERLAP_WORDS,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.window_words == 0 || self.overlap_words >= self.window_words {
            return Err(CorpusError::InvalidChunkParams {
                window: self.window_words,
                overlap: self.overlap_words,
            });
        }
        Ok(())
    }
}

struct Section {
    path: Vec<String>,
    start: usize,
    end: usize,
}

/// Returns `(level, title)` for a markdown ATX heading line.
fn heading(line: &str) -> Option<(usize, String)> {
    let trimmed = line.trim_start();
    let level = trimmed.chars().take_while(|&c| c == '#').count();
    if !(1..=6).contains(&level) {
        return None;
    }
    let rest = &trimmed[level..];
    if !(rest.is_empty() || rest.starts_with([' ', '\t'])) {
        return None;
    }
    Some((level, rest.trim().trim_end_matches('#').trim().to_string()))
}

/// Splits a document at markdown headings, then windows each section.
///
/// Word offsets are global to the document. The heading line's words belong
/// to the section it opens. Windows advance by `window - overlap`; the last
/// window of a section runs from its stride position to the section end.
pub fn chunk_document(
    doc_id: &str,
    text: &str,
    params: ChunkParams,
) -> Result<Vec<DocChunk>, CorpusError> {
    params.validate()?;

    let mut words: Vec<&str> = Vec::new();
    let mut sections: Vec<Section> = Vec::new();
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut current = Section {
        path: Vec::new(),
        start: 0,
        end: 0,
    };

    for line in text.lines() {
        if let Some((level, title)) = heading(line) {
            current.end = words.len();
            sections.push(current);
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, title));
            current = Section {
                path: stack.iter().map(|(_, t)| t.clone()).collect(),
                start: words.len(),
                end: 0,
            };
        }
        words.extend(line.split_whitespace());
    }
    current.end = words.len();
    sections.push(current);

    if words.is_empty() {
        return Err(CorpusError::EmptyDocument(doc_id.to_string()));
    }

    let stride = params.window_words - params.overlap_words;
    let mut chunks = Vec::new();
    for section in sections.into_iter().filter(|s| s.end > s.start) {
        let mut start = section.start;
        loop {
            let end = (start + params.window_words).min(section.end);
            chunks.push(DocChunk {
                chunk_id: chunks.len(),
                doc_id: doc_id.to_string(),
                section_path: section.path.clone(),
                text: words[start..end].join(" "),
                word_span: (start, end),
            });
            if end == section.end {
                break;
            }
            start += stride;
        }
    }
    Ok(chunks)
}
