//! Offline rule-based backend. It recognizes three ERC-20 bug shapes by
//! pattern and answers every role with the same verdict text. This is a
//! smoke-test vehicle, not a model.

use std::sync::OnceLock;

use regex::Regex;

use super::{
    count_prompt_tokens, count_text_tokens, Backend, GatewayError, GenerationRequest,
    GenerationResponse,
};
use crate::preprocess::{is_ident_char, strip_comments};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Rule {
    /// `.call{value: ..}` precedes a write to a balance mapping.
    Reentrancy,
    /// `balance[k] -= ..` without an earlier `require(..)` on `balance[k]`.
    NoBalanceCheck,
    /// `transferFrom`-named function never reads an allowance mapping.
    MissingAllowance,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Reentrancy => "reentrancy",
            Rule::NoBalanceCheck => "no-balance-check",
            Rule::MissingAllowance => "missing-allowance",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            Rule::Reentrancy => "external call with value is made before a balance update",
            Rule::NoBalanceCheck => "balance is decremented without a prior require on it",
            Rule::MissingAllowance => "transferFrom never reads the allowance mapping",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeuristicVerdict {
    pub vulnerable: bool,
    /// Fired rules in rule order, each with the functions it fired in.
    pub fired: Vec<(Rule, Vec<String>)>,
}

impl HeuristicVerdict {
    pub fn reasons(&self) -> Vec<String> {
        self.fired
            .iter()
            .map(|(rule, fns)| format!("{}: {} in {}", rule.name(), rule.describe(), fns.join(", ")))
            .collect()
    }

    /// `Y`/`N` on the first line, one `- ` bullet per reason after it.
    pub fn to_text(&self) -> String {
        let mut out = String::from(if self.vulnerable { "Y" } else { "N" });
        let reasons = self.reasons();
        if reasons.is_empty() {
            out.push_str("\n- no heuristic rule matched");
        }
        for r in reasons {
            out.push_str("\n- ");
            out.push_str(&r);
        }
        out
    }
}

struct Function<'a> {
    name: &'a str,
    body: &'a str,
}

struct Access {
    pos: usize,
    key: String,
    op: Option<&'static str>,
}

/// Index of the delimiter closing the one at `open`, skipping string
/// literals.
fn matching_close(text: &str, open: usize, open_ch: u8, close_ch: u8) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut i = open;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'"' || b == b'\'' {
            i += 1;
            while i < bytes.len() && bytes[i] != b {
                if bytes[i] == b'\\' {
                    i += 1;
                }
                i += 1;
            }
        } else if b == open_ch {
            depth += 1;
        } else if b == close_ch {
            depth -= 1;
            if depth == 0 {
                return Some(i);
            }
        }
        i += 1;
    }
    None
}

/// Blanks string literal contents (quotes kept) without moving byte offsets.
fn mask_strings(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for c in text.chars() {
        match quote {
            None => {
                if c == '"' || c == '\'' {
                    quote = Some(c);
                }
                out.push(c);
            }
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                    out.push(c);
                    continue;
                }
                out.extend(std::iter::repeat_n(' ', c.len_utf8()));
            }
        }
    }
    out
}

fn compact(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn mapping_names(text: &str) -> Vec<String> {
    static MAPPING: OnceLock<Regex> = OnceLock::new();
    let re = MAPPING.get_or_init(|| Regex::new(r"\bmapping\s*\(").unwrap());
    let mut names = Vec::new();
    for m in re.find_iter(text) {
        let Some(close) = matching_close(text, m.end() - 1, b'(', b')') else {
            continue;
        };
        let rest = &text[close + 1..];
        let Some(semi) = rest.find(';') else { continue };
        let decl = rest[..semi].split('=').next().unwrap_or("");
        if let Some(name) = decl
            .split(|c: char| !is_ident_char(c))
            .rfind(|t| !t.is_empty())
        {
            names.push(name.to_string());
        }
    }
    names
}

fn functions(text: &str) -> Vec<Function<'_>> {
    static FUNCTION: OnceLock<Regex> = OnceLock::new();
    let re = FUNCTION.get_or_init(|| Regex::new(r"\bfunction\s+([A-Za-z_$][\w$]*)\s*\(").unwrap());
    let mut out = Vec::new();
    for caps in re.captures_iter(text) {
        let whole = caps.get(0).unwrap();
        let Some(params_end) = matching_close(text, whole.end() - 1, b'(', b')') else {
            continue;
        };
        let after = &text[params_end + 1..];
        let (Some(brace), semi) = (after.find('{'), after.find(';')) else {
            continue;
        };
        if semi.is_some_and(|s| s < brace) {
            continue; // declaration without a body
        }
        let open = params_end + 1 + brace;
        let Some(close) = matching_close(text, open, b'{', b'}') else {
            continue;
        };
        out.push(Function {
            name: caps.get(1).unwrap().as_str(),
            body: &text[open + 1..close],
        });
    }
    out
}

fn accesses(body: &str, name: &str) -> Vec<Access> {
    let re = Regex::new(&format!(r"(?:^|[^\w$.]){}\s*\[", regex::escape(name))).unwrap();
    let mut out = Vec::new();
    for m in re.find_iter(body) {
        let open = m.end() - 1;
        let Some(mut close) = matching_close(body, open, b'[', b']') else {
            continue;
        };
        let key = compact(&body[open + 1..close]);
        // nested mappings: a[x][y]
        loop {
            let rest = body[close + 1..].trim_start();
            if !rest.starts_with('[') {
                break;
            }
            let next = body.len() - rest.len();
            match matching_close(body, next, b'[', b']') {
                Some(c) => close = c,
                None => break,
            }
        }
        let rest = body[close + 1..].trim_start();
        let op = ["+=", "-=", "*=", "/=", "++", "--"]
            .into_iter()
            .find(|op| rest.starts_with(op))
            .or_else(|| (rest.starts_with('=') && !rest.starts_with("==")).then_some("="));
        let name_pos = body[m.start()..].find(name).map_or(m.start(), |o| m.start() + o);
        out.push(Access {
            pos: name_pos,
            key,
            op,
        });
    }
    out
}

fn require_args(body: &str) -> Vec<(usize, String)> {
    static REQUIRE: OnceLock<Regex> = OnceLock::new();
    let re = REQUIRE.get_or_init(|| Regex::new(r"\brequire\s*\(").unwrap());
    re.find_iter(body)
        .filter_map(|m| {
            let close = matching_close(body, m.end() - 1, b'(', b')')?;
            Some((m.start(), compact(&body[m.end()..close])))
        })
        .collect()
}

fn value_calls(body: &str) -> Vec<usize> {
    static CALL: OnceLock<Regex> = OnceLock::new();
    let re = CALL.get_or_init(|| {
        Regex::new(r"\.call\s*\{\s*value\s*:|\.call\s*\.\s*value\s*\(").unwrap()
    });
    re.find_iter(body).map(|m| m.start()).collect()
}

/// Applies the three rules to Solidity source. Comments are stripped first
/// when the source lexes cleanly.
pub fn analyze(contract_text: &str) -> Result<HeuristicVerdict, GatewayError> {
    if contract_text.trim().is_empty() {
        return Err(GatewayError::EmptyInput);
    }
    let stripped = strip_comments(contract_text);
    let masked = mask_strings(stripped.as_deref().unwrap_or(contract_text));
    let text = masked.as_str();

    let mappings = mapping_names(text);
    let balances: Vec<&str> = mappings
        .iter()
        .filter(|n| n.to_lowercase().contains("balance"))
        .map(String::as_str)
        .collect();
    let allowances: Vec<&str> = mappings
        .iter()
        .filter(|n| n.to_lowercase().contains("allow"))
        .map(String::as_str)
        .collect();

    let mut reentrant = Vec::new();
    let mut unchecked = Vec::new();
    let mut no_allowance = Vec::new();

    for f in functions(text) {
        let writes: Vec<(Access, &str)> = balances
            .iter()
            .flat_map(|b| accesses(f.body, b).into_iter().map(move |a| (a, *b)))
            .filter(|(a, _)| a.op.is_some())
            .collect();

        let calls = value_calls(f.body);
        if let Some(first_call) = calls.iter().min() {
            if writes.iter().any(|(a, _)| a.pos > *first_call) {
                reentrant.push(f.name.to_string());
            }
        }

        let requires = require_args(f.body);
        let missing_check = writes.iter().filter(|(a, _)| a.op == Some("-=")).any(|(a, name)| {
            let needle = format!("{name}[{}]", a.key);
            !requires
                .iter()
                .any(|(pos, args)| *pos < a.pos && args.contains(&needle))
        });
        if missing_check {
            unchecked.push(f.name.to_string());
        }

        if f.name.to_lowercase().contains("transferfrom")
            && !allowances.iter().any(|n| !accesses(f.body, n).is_empty())
        {
            no_allowance.push(f.name.to_string());
        }
    }

    let fired: Vec<(Rule, Vec<String>)> = [
        (Rule::Reentrancy, reentrant),
        (Rule::NoBalanceCheck, unchecked),
        (Rule::MissingAllowance, no_allowance),
    ]
    .into_iter()
    .filter(|(_, fns)| !fns.is_empty())
    .collect();

    Ok(HeuristicVerdict {
        vulnerable: !fired.is_empty(),
        fired,
    })
}

/// Verdict text: `Y` or `N`, then one bullet per fired rule.
pub fn heuristic_verdict(contract_text: &str) -> Result<String, GatewayError> {
    analyze(contract_text).map(|v| v.to_text())
}

/// Code inside the first fenced block of a prompt, or the whole prompt.
fn contract_from_prompt(prompt: &str) -> &str {
    static FENCE: OnceLock<Regex> = OnceLock::new();
    let re = FENCE.get_or_init(|| Regex::new(r"(?s)```[A-Za-z]*[ \t]*\r?\n(.*?)```").unwrap());
    re.captures(prompt)
        .and_then(|c| c.get(1))
        .map_or(prompt, |m| m.as_str())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicBackend;

impl Backend for HeuristicBackend {
    fn id(&self) -> &str {
        "heuristic"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let text = heuristic_verdict(contract_from_prompt(request.last_user_content()))?;
        Ok(GenerationResponse {
            prompt_tokens: count_prompt_tokens(request),
            completion_tokens: count_text_tokens(&text),
            text,
            backend_id: self.id().to_string(),
            truncated: false,
        })
    }
}
