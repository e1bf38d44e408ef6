//! Deterministic readers for free-text model replies.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::label::Label;

pub const REASONER_UNAVAILABLE: &str = "reasoner-unavailable";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParsedLabel {
    Label(Label),
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Confirm,
    Overturn,
    Unparseable,
}

fn first_token(text: &str) -> String {
    text.split_whitespace()
        .next()
        .unwrap_or("")
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_uppercase()
}

/// First matching rule wins:
/// 1. leading token `Y`/`YES` or `N`/`NO` (punctuation stripped, any case);
/// 2. mentions "not vulnerable", "non-vulnerable" or "no vulnerab..." -> N;
/// 3. mentions "vulnerable" -> Y.
pub fn parse_label(text: &str) -> ParsedLabel {
    match first_token(text).as_str() {
        "Y" | "YES" => return ParsedLabel::Label(Label::Y),
        "N" | "NO" => return ParsedLabel::Label(Label::N),
        _ => {}
    }
    let lower = text.to_lowercase();
    if ["not vulnerable", "non-vulnerable", "no vulnerab"]
        .iter()
        .any(|p| lower.contains(p))
    {
        ParsedLabel::Label(Label::N)
    } else if lower.contains("vulnerable") {
        ParsedLabel::Label(Label::Y)
    } else {
        ParsedLabel::Unparseable
    }
}

fn bullet_body(line: &str) -> Option<&str> {
    static ENUM: OnceLock<Regex> = OnceLock::new();
    let re = ENUM.get_or_init(|| Regex::new(r"^(?:[-*]|\d+[.)])\s+(.*)$").unwrap());
    re.captures(line).map(|c| c.get(1).unwrap().as_str().trim())
}

/// Bullet or enumerated lines become reasons; failing that, sentences split
/// on ". ". Never returns an empty list.
pub fn parse_reasons(raw: &str) -> Vec<String> {
    let bullets: Vec<String> = raw
        .lines()
        .filter_map(|l| bullet_body(l.trim()))
        .filter(|b| !b.is_empty())
        .map(str::to_string)
        .collect();
    if !bullets.is_empty() {
        return bullets;
    }
    let sentences: Vec<String> = raw
        .split(". ")
        .map(|s| s.trim().trim_end_matches('.').trim())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if !sentences.is_empty() {
        return sentences;
    }
    let whole = raw.trim();
    vec![if whole.is_empty() {
        REASONER_UNAVAILABLE.to_string()
    } else {
        whole.to_string()
    }]
}

/// A leading CONFIRM/OVERTURN wins; otherwise the reply is read as a label
/// and compared with the detector's verdict.
pub fn parse_decision(text: &str, detector_final: Label) -> Decision {
    match first_token(text).as_str() {
        "CONFIRM" | "CONFIRMED" => return Decision::Confirm,
        "OVERTURN" | "OVERTURNED" => return Decision::Overturn,
        _ => {}
    }
    match parse_label(text) {
        ParsedLabel::Label(l) if l == detector_final => Decision::Confirm,
        ParsedLabel::Label(_) => Decision::Overturn,
        ParsedLabel::Unparseable => Decision::Unparseable,
    }
}

/// Chunk ids cited as `[chunk N]` / `chunk #N`, restricted to `allowed`, in
/// first-mention order without duplicates.
pub fn parse_citations(text: &str, allowed: &[usize]) -> Vec<usize> {
    static CITE: OnceLock<Regex> = OnceLock::new();
    let re = CITE.get_or_init(|| Regex::new(r"(?i)\bchunk[\s_#:-]*(\d+)").unwrap());
    let mut out = Vec::new();
    for caps in re.captures_iter(text) {
        if let Ok(id) = caps[1].parse::<usize>() {
            if allowed.contains(&id) && !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}
