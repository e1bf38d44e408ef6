//! Source normalization applied to Solidity before any prompt is built.
//!
//! The pipeline is `strip_comments` followed by `normalize_whitespace`.
//! Both passes keep line structure intact so that positions reported for
//! the raw source still map onto the normalized text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A location in the raw source. `offset` is a byte offset, `line` and
/// `column` are 1-based (column counts characters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Position {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}, column {}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PreprocessError {
    #[error("unterminated block comment starting at {0}")]
    UnterminatedBlockComment(Position),
    #[error("unterminated string literal starting at {0}")]
    UnterminatedString(Position),
    #[error("source unit has an empty id")]
    EmptyId,
    #[error("source unit `{0}` has empty text")]
    EmptyText(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceUnit {
    pub id: String,
    pub text: String,
}

impl SourceUnit {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedSource {
    pub id: String,
    pub text: String,
    pub token_count: usize,
}

/// Tracks line/column while walking the source so errors can point at the
/// opening delimiter.
struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.char_indices().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn position(&mut self, src_len: usize) -> Position {
        let offset = self.chars.peek().map(|&(i, _)| i).unwrap_or(src_len);
        Position {
            offset,
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }
}

/// Removes `//` and `/* */` comments.
///
/// A line comment becomes a single space (the terminating newline is kept);
/// a block comment becomes exactly the `\n` characters it spanned. String
/// literals in either quote style are copied verbatim, escapes included, so
/// `hex"..."` and `unicode"..."` literals are covered by the same path.
pub fn strip_comments(source: &str) -> Result<String, PreprocessError> {
    let mut out = String::with_capacity(source.len());
    let mut cur = Cursor::new(source);
    let len = source.len();

    while let Some(c) = cur.peek() {
        match c {
            '"' | '\'' => {
                let start = cur.position(len);
                cur.bump();
                out.push(c);
                loop {
                    match cur.bump() {
                        None => return Err(PreprocessError::UnterminatedString(start)),
                        Some('\\') => {
                            out.push('\\');
                            match cur.bump() {
                                Some(escaped) => out.push(escaped),
                                None => return Err(PreprocessError::UnterminatedString(start)),
                            }
                        }
                        Some(ch) => {
                            out.push(ch);
                            if ch == c {
                                break;
                            }
                        }
                    }
                }
            }
            '/' => {
                let start = cur.position(len);
                cur.bump();
                match cur.peek() {
                    Some('/') => {
                        while let Some(ch) = cur.peek() {
                            if ch == '\n' {
                                break;
                            }
                            cur.bump();
                        }
                        out.push(' ');
                    }
                    Some('*') => {
                        cur.bump();
                        let mut prev = '\0';
                        loop {
                            match cur.bump() {
                                None => {
                                    return Err(PreprocessError::UnterminatedBlockComment(start))
                                }
                                Some('/') if prev == '*' => break,
                                Some('\n') => {
                                    out.push('\n');
                                    prev = '\n';
                                }
                                Some(ch) => prev = ch,
                            }
                        }
                    }
                    _ => out.push('/'),
                }
            }
            _ => {
                cur.bump();
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Collapses horizontal whitespace runs, trims line ends, and squeezes runs
/// of blank lines down to one. Idempotent.
pub fn normalize_whitespace(text: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut prev_blank = false;
    for raw in text.split('\n') {
        let mut line = String::with_capacity(raw.len());
        let mut in_run = false;
        for ch in raw.chars() {
            if ch == ' ' || ch == '\t' {
                if !in_run {
                    line.push(' ');
                    in_run = true;
                }
            } else {
                line.push(ch);
                in_run = false;
            }
        }
        let trimmed_len = line.trim_end_matches([' ', '\t', '\r']).len();
        line.truncate(trimmed_len);

        let blank = line.is_empty();
        if blank && prev_blank {
            continue;
        }
        prev_blank = blank;
        lines.push(line);
    }
    lines.join("\n")
}

/// Counts tokens in a piece of text. Implementations must be deterministic.
pub trait Tokenizer: Send + Sync {
    fn count_tokens(&self, text: &str) -> usize;
}

/// Default splitter: a maximal run of identifier characters is one token,
/// every other non-whitespace character is its own token.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimpleSplitter;

pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

impl Tokenizer for SimpleSplitter {
    fn count_tokens(&self, text: &str) -> usize {
        let mut count = 0;
        let mut in_ident = false;
        for c in text.chars() {
            if is_ident_char(c) {
                if !in_ident {
                    count += 1;
                    in_ident = true;
                }
            } else {
                in_ident = false;
                if !c.is_whitespace() {
                    count += 1;
                }
            }
        }
        count
    }
}

pub fn count_tokens(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.count_tokens(text)
}

/// Strips comments and normalizes whitespace, counting tokens with the
/// default splitter.
pub fn preprocess(source: &SourceUnit) -> Result<NormalizedSource, PreprocessError> {
    preprocess_with(source, &SimpleSplitter)
}

pub fn preprocess_with(
    source: &SourceUnit,
    tokenizer: &dyn Tokenizer,
) -> Result<NormalizedSource, PreprocessError> {
    if source.id.is_empty() {
        return Err(PreprocessError::EmptyId);
    }
    if source.text.is_empty() {
        return Err(PreprocessError::EmptyText(source.id.clone()));
    }
    let text = normalize_whitespace(&strip_comments(&source.text)?);
    let token_count = tokenizer.count_tokens(&text);
    Ok(NormalizedSource {
        id: source.id.clone(),
        text,
        token_count,
    })
}
