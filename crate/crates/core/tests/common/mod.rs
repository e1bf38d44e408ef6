//! Generators, oracles and checks shared by the integration tests and the
//! acceptance harness. Every oracle here is written independently of the
//! library code it checks.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use regex::Regex;

use smartllm::corpus::{
    load_corpus_dir, ChunkParams, DocChunk, EmbeddingVector, HashedTfEmbedder, RetrievalIndex,
    ScoredChunk,
};
use smartllm::dataset::{ContractSample, GroundTruth, VulnType};
use smartllm::gateway::{
    Backend, ChatRole, Gateway, GatewayError, GenerationRequest, GenerationResponse,
    RecordingBackend, ScriptedBackend,
};
use smartllm::pipeline::{
    AuditConfig, AuditResult, AuditStatus, Auditor, Decision, FailureKind, PromptRole,
    PromptTemplate, TemplateSet,
};
use smartllm::preprocess::{normalize_whitespace, preprocess, strip_comments, SourceUnit};
use smartllm::Label;

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn fixture(rel: &str) -> PathBuf {
    manifest_dir().join("tests/fixtures").join(rel)
}

// ---------------------------------------------------------------------------
// Preprocessing

#[derive(Debug, Clone)]
pub enum Fragment {
    Code(String),
    LineComment(String),
    BlockComment(String),
    Str(String),
}

#[derive(Debug, Clone)]
pub struct SolCase {
    pub fragments: Vec<Fragment>,
}

impl SolCase {
    pub fn source(&self) -> String {
        self.fragments
            .iter()
            .map(|f| match f {
                Fragment::Code(c) | Fragment::Str(c) => c.clone(),
                Fragment::LineComment(t) => format!("//{t}\n"),
                Fragment::BlockComment(t) => format!("/*{t}*/"),
            })
            .collect()
    }

    /// Expected comment-free text, assembled fragment by fragment.
    pub fn expected_stripped(&self) -> String {
        self.fragments
            .iter()
            .map(|f| match f {
                Fragment::Code(c) | Fragment::Str(c) => c.clone(),
                Fragment::LineComment(_) => " \n".to_string(),
                Fragment::BlockComment(t) => t.chars().filter(|&c| c == '\n').collect(),
            })
            .collect()
    }

    pub fn literals(&self) -> Vec<&str> {
        self.fragments
            .iter()
            .filter_map(|f| match f {
                Fragment::Str(s) => Some(s.as_str()),
                _ => None,
            })
            .collect()
    }
}

fn code_fragment() -> impl Strategy<Value = Fragment> {
    // Nothing here starts or ends with `/` or `*`, so concatenation cannot
    // create a comment delimiter by accident.
    prop::sample::select(vec![
        "uint256 x", " = ", "1", ";", "\n", "\n\n\n", "\t", "   ", "a / b", "c * d", "{", "}",
        "(", ")", "foo.bar", "_x$", " \r\n", "hex", "unicode", "mapping(address => uint)",
        "émoji ✓", "return", "  \t  ",
    ])
    .prop_map(|s| Fragment::Code(s.to_string()))
}

fn string_fragment() -> impl Strategy<Value = Fragment> {
    let piece = prop_oneof![
        "[a-z /*'.]{1,3}",
        Just("//".to_string()),
        Just("/*".to_string()),
        Just("*/".to_string()),
        prop::sample::select(vec!["\\\\", "\\n", "\\\"", "\\'", "\\x41"]).prop_map(String::from),
    ];
    (
        prop::sample::select(vec!["", "hex", "unicode"]),
        prop::bool::ANY,
        prop::collection::vec(piece, 0..5),
    )
        .prop_map(|(prefix, double, pieces)| {
            let quote = if double { '"' } else { '\'' };
            // An unescaped quote of the same kind would end the literal early.
            let body = escape_bare_quotes(&pieces.concat(), quote);
            Fragment::Str(format!("{prefix}{quote}{body}{quote}"))
        })
}

fn escape_bare_quotes(body: &str, quote: char) -> String {
    let mut out = String::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            out.push(c);
            match chars.next() {
                Some(n) => out.push(n),
                None => out.push('\\'),
            }
        } else if c == quote {
            out.push('\\');
            out.push(c);
        } else {
            out.push(c);
        }
    }
    out
}

fn line_comment_fragment() -> impl Strategy<Value = Fragment> {
    "[a-zA-Z0-9 /*\"'\\\\\t]{0,12}".prop_map(Fragment::LineComment)
}

fn block_comment_fragment() -> impl Strategy<Value = Fragment> {
    "[a-z \n/\"'*@]{0,16}"
        .prop_filter("no terminator inside", |t| !t.contains("*/"))
        .prop_map(Fragment::BlockComment)
}

pub fn solidity_like() -> impl Strategy<Value = SolCase> {
    let fragment = prop_oneof![
        4 => code_fragment(),
        2 => string_fragment(),
        1 => line_comment_fragment(),
        1 => block_comment_fragment(),
    ];
    prop::collection::vec(fragment, 0..24).prop_map(|fragments| SolCase { fragments })
}

/// Character-scan token counter: identifier runs count once, any other
/// non-whitespace character counts once.
pub fn oracle_token_count(text: &str) -> usize {
    let mut count = 0;
    let mut in_ident = false;
    for c in text.chars() {
        let ident = c.is_alphanumeric() || c == '_' || c == '$';
        let starts_token = if ident { !in_ident } else { !c.is_whitespace() };
        if starts_token {
            count += 1;
        }
        in_ident = ident;
    }
    count
}

/// All four preprocessing properties plus the token-count oracle for one
/// generated input.
pub fn check_preprocess_case(case: &SolCase) -> Result<(), String> {
    let src = case.source();
    let stripped = strip_comments(&src).map_err(|e| format!("strip failed on {src:?}: {e}"))?;

    let expected = case.expected_stripped();
    if stripped != expected {
        return Err(format!("strip mismatch on {src:?}:\n got {stripped:?}\nwant {expected:?}"));
    }
    if stripped.matches('\n').count() != src.matches('\n').count() {
        return Err(format!("newline count changed for {src:?}"));
    }

    let mut cursor = 0;
    let mut gaps = Vec::new();
    for lit in case.literals() {
        let Some(at) = stripped[cursor..].find(lit) else {
            return Err(format!("literal {lit:?} missing from {stripped:?}"));
        };
        gaps.push(&stripped[cursor..cursor + at]);
        cursor += at + lit.len();
    }
    gaps.push(&stripped[cursor..]);
    if let Some(g) = gaps.iter().find(|g| g.contains("//") || g.contains("/*")) {
        return Err(format!("comment delimiter outside strings: {g:?} in {stripped:?}"));
    }

    let once = normalize_whitespace(&src);
    if normalize_whitespace(&once) != once {
        return Err(format!("normalize not idempotent on {src:?}"));
    }
    if !src.trim().is_empty() {
        let p = preprocess(&SourceUnit::new("case", src.clone())).map_err(|e| e.to_string())?;
        if p.text != normalize_whitespace(&stripped) {
            return Err("preprocess differs from normalize(strip)".into());
        }
        if !p.text.trim().is_empty() {
            let again = preprocess(&SourceUnit::new("case", p.text.clone())).map_err(|e| e.to_string())?;
            if again.text != p.text {
                return Err(format!("preprocess not idempotent on {src:?}"));
            }
        }
        if p.token_count != oracle_token_count(&p.text) {
            return Err(format!(
                "token count {} != oracle {} for {:?}",
                p.token_count,
                oracle_token_count(&p.text),
                p.text
            ));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Retrieval

pub const ORACLE_DIM: usize = 256;
pub const ORACLE_N: usize = 500;

fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn random_vector(rng: &mut ChaCha8Rng) -> EmbeddingVector {
    let raw: Vec<f64> = (0..ORACLE_DIM).map(|_| unit_f64(rng) * 2.0 - 1.0).collect();
    EmbeddingVector::normalized(&raw).expect("non-zero")
}

/// 500 random unit vectors; every 10th vector repeats an earlier one so
/// exact score ties occur.
pub fn random_index(seed: u64) -> (RetrievalIndex, Vec<EmbeddingVector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors: Vec<EmbeddingVector> = Vec::with_capacity(ORACLE_N);
    for i in 0..ORACLE_N {
        if i % 10 == 9 {
            let src = (rng.next_u64() % i as u64) as usize;
            vectors.push(vectors[src].clone());
        } else {
            vectors.push(random_vector(&mut rng));
        }
    }
    let chunks = (0..ORACLE_N)
        .map(|i| DocChunk {
            chunk_id: i,
            doc_id: "synthetic".into(),
            section_path: vec![format!("s{}", i / 50)],
            text: format!("vector {i}"),
            word_span: (i, i + 1),
        })
        .collect();
    let index = RetrievalIndex::from_parts("test/random", ORACLE_DIM, chunks, vectors.clone())
        .expect("valid parts");
    let mut queries: Vec<EmbeddingVector> = (0..20).map(|_| random_vector(&mut rng)).collect();
    // Queries equal to duplicated vectors produce ties at the top.
    queries.extend((0..10).map(|j| vectors[j * 50 + 9].clone()));
    (index, queries)
}

/// Scores every vector, sorts by score descending then id ascending.
pub fn brute_force(vectors: &[EmbeddingVector], query: &EmbeddingVector, k: usize) -> Vec<(usize, f64)> {
    let q = query.values();
    let mut all: Vec<(usize, f64)> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut dot = 0.0f64;
            for (a, b) in v.values().iter().zip(q) {
                dot += *a as f64 * *b as f64;
            }
            (i, dot)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub fn check_retrieval_oracle(seed: u64) -> Result<usize, String> {
    let (index, queries) = random_index(seed);
    let mut ties_seen = 0;
    for (qi, q) in queries.iter().enumerate() {
        for k in [1, 5, 10] {
            let got = index.search_vector(q, k).map_err(|e| e.to_string())?;
            let want = brute_force(index.vectors(), q, k);
            let got_pairs: Vec<(usize, f64)> = got.iter().map(|s| (s.chunk_id, s.score)).collect();
            if got_pairs.len() != want.len()
                || got_pairs
                    .iter()
                    .zip(&want)
                    .any(|(g, w)| g.0 != w.0 || (g.1 - w.1).abs() > 1e-12)
            {
                return Err(format!("query {qi} k {k}: got {got_pairs:?}, want {want:?}"));
            }
            ties_seen += want.windows(2).filter(|w| w[0].1 == w[1].1).count();
        }
    }
    if ties_seen == 0 {
        return Err("generated data produced no ties".into());
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("index.json");
    index.save(&path).map_err(|e| e.to_string())?;
    let loaded = RetrievalIndex::load(&path).map_err(|e| e.to_string())?;
    for q in &queries {
        let a = index.search_vector(q, 10).map_err(|e| e.to_string())?;
        let b = loaded.search_vector(q, 10).map_err(|e| e.to_string())?;
        let bits = |v: &[ScoredChunk]| -> Vec<(usize, u64)> {
            v.iter().map(|s| (s.chunk_id, s.score.to_bits())).collect()
        };
        if bits(&a) != bits(&b) {
            return Err("scores changed across save/load".into());
        }
    }
    Ok(ties_seen)
}

// ---------------------------------------------------------------------------
// Datasets

/// 49 reentrancy, 40 access control, 61 logic error, 150 safe.
pub fn reference_shaped_corpus() -> Vec<ContractSample> {
    let mut out = Vec::new();
    let groups = [
        (VulnType::Reentrancy, 49),
        (VulnType::AccessControl, 40),
        (VulnType::LogicError, 61),
        (VulnType::None, 150),
    ];
    for (vt, n) in groups {
        for i in 0..n {
            let label = if vt == VulnType::None { GroundTruth::Safe } else { GroundTruth::Vulnerable };
            out.push(ContractSample {
                id: format!("{}-{i:03}", vt.name()),
                source: format!("contract C{i} {{ }}"),
                label,
                vuln_type: vt,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Pipeline scenarios

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetReply {
    Y,
    N,
    ProseY,
    ProseN,
    Garbage,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerReply {
    Confirm,
    Overturn,
    SaysY,
    SaysN,
    Garbage,
    Fail,
}

#[derive(Debug, Clone)]
pub struct ContractPlan {
    pub detector: Vec<DetReply>,
    pub reasoner_fails: bool,
    pub verificator: VerReply,
    pub citations: Vec<usize>,
    pub broken_source: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub m: usize,
    pub k: usize,
    pub parallelism: usize,
    pub contracts: Vec<ContractPlan>,
}

fn det_reply() -> impl Strategy<Value = DetReply> {
    prop::sample::select(vec![
        DetReply::Y,
        DetReply::N,
        DetReply::ProseY,
        DetReply::ProseN,
        DetReply::Garbage,
        DetReply::Fail,
    ])
}

fn ver_reply() -> impl Strategy<Value = VerReply> {
    prop::sample::select(vec![
        VerReply::Confirm,
        VerReply::Overturn,
        VerReply::SaysY,
        VerReply::SaysN,
        VerReply::Garbage,
        VerReply::Fail,
    ])
}

pub fn scenario() -> impl Strategy<Value = Scenario> {
    (1usize..=5, 1usize..=6, 1usize..=4).prop_flat_map(|(m, k, parallelism)| {
        let plan = (
            prop::collection::vec(det_reply(), m),
            prop::bool::weighted(0.15),
            ver_reply(),
            prop::collection::vec(0usize..40, 0..4),
            prop::bool::weighted(0.05),
        )
            .prop_map(|(detector, reasoner_fails, verificator, citations, broken_source)| ContractPlan {
                detector,
                reasoner_fails,
                verificator,
                citations,
                broken_source,
            });
        prop::collection::vec(plan, 1..=7).prop_map(move |contracts| Scenario {
            m,
            k,
            parallelism,
            contracts,
        })
    })
}

fn scenario_templates(m: usize) -> TemplateSet {
    TemplateSet {
        detectors: (0..m)
            .map(|i| {
                PromptTemplate::new(PromptRole::Detector, format!("Variant {i}. Is this vulnerable?\n{{code}}"))
                    .unwrap()
            })
            .collect(),
        reasoner: PromptTemplate::new(PromptRole::Reasoner, "Verdict {verdict}. Explain:\n{code}").unwrap(),
        verificator: PromptTemplate::new(
            PromptRole::Verificator,
            "Check:\n{code}\nReasons:\n{reasons}\nContext:\n{context}",
        )
        .unwrap(),
    }
}

/// Replies according to a scenario, keyed on the contract number in the
/// code and the variant number in detector prompts.
struct ScenarioBackend {
    plans: Vec<ContractPlan>,
}

fn outage() -> GatewayError {
    GatewayError::Transport("planned outage".into())
}

impl Backend for ScenarioBackend {
    fn id(&self) -> &str {
        "scenario"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, GatewayError> {
        let system = request
            .messages
            .iter()
            .find(|m| m.role == ChatRole::System)
            .map_or("", |m| m.content.as_str());
        let role = PromptRole::ALL
            .into_iter()
            .find(|r| r.system_message() == system)
            .expect("role system message");
        let prompt = request.last_user_content();
        let contract: usize = Regex::new(r"contract K(\d+) ")
            .unwrap()
            .captures(prompt)
            .expect("contract number")[1]
            .parse()
            .unwrap();
        let plan = &self.plans[contract];
        let text = match role {
            PromptRole::Detector => {
                let variant: usize = Regex::new(r"^Variant (\d+)\.")
                    .unwrap()
                    .captures(prompt)
                    .expect("variant")[1]
                    .parse()
                    .unwrap();
                match plan.detector[variant] {
                    DetReply::Y => "Y",
                    DetReply::N => "n.",
                    DetReply::ProseY => "The contract is vulnerable to re-entrancy.",
                    DetReply::ProseN => "I see no vulnerabilities here.",
                    DetReply::Garbage => "Hard to tell.",
                    DetReply::Fail => return Err(outage()),
                }
                .to_string()
            }
            PromptRole::Reasoner if plan.reasoner_fails => return Err(outage()),
            PromptRole::Reasoner => format!("- reason for contract {contract}\n- transfer lacks balance check"),
            PromptRole::Verificator => {
                let cites: String = plan.citations.iter().map(|c| format!(" [chunk {c}]")).collect();
                let head = match plan.verificator {
                    VerReply::Confirm => "CONFIRM",
                    VerReply::Overturn => "OVERTURN",
                    VerReply::SaysY => "Y",
                    VerReply::SaysN => "N",
                    VerReply::Garbage => "unsure",
                    VerReply::Fail => return Err(outage()),
                };
                format!("{head}{cites}")
            }
        };
        Ok(GenerationResponse {
            text,
            prompt_tokens: 0,
            completion_tokens: 0,
            backend_id: "scenario".into(),
            truncated: false,
        })
    }
}

pub fn scenario_index() -> Arc<RetrievalIndex> {
    let chunks = load_corpus_dir(
        &manifest_dir().join("assets/corpus"),
        ChunkParams { window_words: 40, overlap_words: 8 },
    )
    .expect("corpus loads");
    Arc::new(RetrievalIndex::build(chunks, &HashedTfEmbedder::default()).expect("index builds"))
}

fn scenario_sources(s: &Scenario) -> Vec<SourceUnit> {
    s.contracts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let text = if p.broken_source {
                format!("contract K{i} {{ /* never closed")
            } else {
                format!("contract K{i} {{\n  function f{i}() public {{ }}\n}}\n")
            };
            SourceUnit::new(format!("contract-{i}"), text)
        })
        .collect()
}

fn auditor(s: &Scenario, backend: Arc<dyn Backend>, index: &Arc<RetrievalIndex>) -> Auditor {
    let config = AuditConfig {
        templates: scenario_templates(s.m),
        retrieval_k: s.k,
        ..AuditConfig::default()
    };
    Auditor::new(config, Gateway::new(backend), index.clone(), Arc::new(HashedTfEmbedder::default()))
        .expect("auditor")
}

fn expected_vote(r: DetReply) -> Option<Label> {
    match r {
        DetReply::Y | DetReply::ProseY => Some(Label::Y),
        DetReply::N | DetReply::ProseN => Some(Label::N),
        DetReply::Garbage | DetReply::Fail => None,
    }
}

fn check_result(i: usize, plan: &ContractPlan, m: usize, r: &AuditResult) -> Result<(), String> {
    let ctx = |msg: String| format!("contract {i}: {msg} ({plan:?})");
    if plan.broken_source {
        return match (r.status, r.failure) {
            (AuditStatus::Failed, Some(FailureKind::Preprocess)) => Ok(()),
            _ => Err(ctx("broken source should fail preprocessing".into())),
        };
    }
    let all_fail = plan.detector.iter().all(|d| *d == DetReply::Fail)
        && plan.reasoner_fails
        && plan.verificator == VerReply::Fail;
    if all_fail {
        return match (r.status, r.failure) {
            (AuditStatus::Failed, Some(FailureKind::Backend)) => Ok(()),
            _ => Err(ctx("all calls failed but result is not a backend failure".into())),
        };
    }
    let det = r.detector.as_ref().ok_or_else(|| ctx("missing detector".into()))?;

    // vote accounting
    if det.votes.len() + det.unparseable_count != m {
        return Err(ctx(format!("{} votes + {} unparseable != {m}", det.votes.len(), det.unparseable_count)));
    }
    let want_votes: Vec<Label> = plan.detector.iter().filter_map(|d| expected_vote(*d)).collect();
    if det.votes != want_votes {
        return Err(ctx(format!("votes {:?} != {want_votes:?}", det.votes)));
    }

    // majority with ties (and no votes at all) going to Y
    let ys = want_votes.iter().filter(|v| **v == Label::Y).count();
    let ns = want_votes.len() - ys;
    let want_det = if ys >= ns { Label::Y } else { Label::N };
    if det.final_label != want_det {
        return Err(ctx(format!("detector final {:?} != {want_det:?}", det.final_label)));
    }

    let ver = r.verification.as_ref().ok_or_else(|| ctx("missing verification".into()))?;
    let want_decision = match plan.verificator {
        VerReply::Confirm => Decision::Confirm,
        VerReply::Overturn => Decision::Overturn,
        VerReply::SaysY if want_det == Label::Y => Decision::Confirm,
        VerReply::SaysN if want_det == Label::N => Decision::Confirm,
        VerReply::SaysY | VerReply::SaysN => Decision::Overturn,
        VerReply::Garbage | VerReply::Fail => Decision::Unparseable,
    };
    if ver.decision != want_decision {
        return Err(ctx(format!("decision {:?} != {want_decision:?}", ver.decision)));
    }
    let want_final = if want_decision == Decision::Overturn { want_det.flipped() } else { want_det };
    if r.final_label != Some(want_final) {
        return Err(ctx(format!("final {:?} != {want_final:?}", r.final_label)));
    }

    // citation soundness
    let retrieved: BTreeSet<usize> = r.retrieved.iter().map(|s| s.chunk_id).collect();
    if let Some(c) = ver.cited_chunk_ids.iter().find(|c| !retrieved.contains(c)) {
        return Err(ctx(format!("cited chunk {c} was not retrieved")));
    }
    if plan.verificator != VerReply::Fail {
        let mut want_cites = Vec::new();
        for c in &plan.citations {
            if retrieved.contains(c) && !want_cites.contains(c) {
                want_cites.push(*c);
            }
        }
        if ver.cited_chunk_ids != want_cites {
            return Err(ctx(format!("citations {:?} != {want_cites:?}", ver.cited_chunk_ids)));
        }
    }
    Ok(())
}

/// Runs a scenario live while recording, replays the recording through the
/// scripted backend, and checks every invariant on both runs.
pub fn check_scenario(s: &Scenario, index: &Arc<RetrievalIndex>) -> Result<(), String> {
    let sources = scenario_sources(s);
    let recorder = Arc::new(RecordingBackend::new(Arc::new(ScenarioBackend { plans: s.contracts.clone() })));
    let live = auditor(s, recorder.clone(), index).audit_batch(&sources, s.parallelism);

    let ids: Vec<&str> = live.iter().map(|r| r.contract_id.as_str()).collect();
    let want_ids: Vec<&str> = sources.iter().map(|c| c.id.as_str()).collect();
    if ids != want_ids {
        return Err(format!("batch order {ids:?} != {want_ids:?}"));
    }
    for (i, (plan, r)) in s.contracts.iter().zip(&live).enumerate() {
        check_result(i, plan, s.m, r)?;
    }

    let replayed = auditor(s, Arc::new(ScriptedBackend::new(recorder.script())), index)
        .audit_batch(&sources, s.parallelism);
    let strip = |rs: &[AuditResult]| -> Vec<String> {
        rs.iter().map(|r| r.without_timing().to_json_line()).collect()
    };
    let (a, b) = (strip(&live), strip(&replayed));
    for (x, y) in a.iter().zip(&b) {
        // Error messages name the backend that failed; everything else must
        // match exactly.
        let scrub = |line: &str| -> serde_json::Value {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v["error"] = serde_json::Value::Null;
            v
        };
        if scrub(x) != scrub(y) {
            return Err(format!("replay diverged:\nlive   {x}\nreplay {y}"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Replay fixture

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_smartllm")
}

pub struct CmdOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_cli(args: &[&str], cwd: &Path) -> CmdOutput {
    let out = std::process::Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs");
    CmdOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Drops `elapsed_ms` from every results line.
pub fn results_without_timing(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).expect("results line");
            v.as_object_mut().unwrap().remove("elapsed_ms");
            v
        })
        .collect()
}

pub fn count_map<'a>(items: impl Iterator<Item = &'a str>) -> HashMap<&'a str, usize> {
    let mut m = HashMap::new();
    for i in items {
        *m.entry(i).or_default() += 1;
    }
    m
}
