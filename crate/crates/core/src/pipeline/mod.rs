//! Detector -> Reasoner -> Verificator orchestration.
//!
//! Each contract is preprocessed, classified by `m` detector prompts with
//! majority voting, explained by the reasoner, and finally checked by the
//! verificator against passages retrieved from the reference corpus. The
//! verificator may confirm or overturn the detector's label.
//!
//! Role calls for one contract run sequentially. Contracts in a batch run
//! on up to `parallelism` worker threads; results keep input order.

mod parse;
mod templates;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Embedder, RetrievalIndex, ScoredChunk};
use crate::gateway::{
    ChatMessage, Gateway, GatewayError, GenerationRequest, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE,
};
use crate::label::Label;
use crate::preprocess::{preprocess, NormalizedSource, SourceUnit};

pub use parse::{
    parse_citations, parse_decision, parse_label, parse_reasons, Decision, ParsedLabel,
    REASONER_UNAVAILABLE,
};
pub use templates::{PromptRole, PromptTemplate, TemplateSet};

pub const DEFAULT_DETECTOR_PROMPTS: usize = 3;
pub const DEFAULT_RETRIEVAL_K: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorVerdict {
    /// Parsed votes in prompt order; unparseable replies are left out.
    pub votes: Vec<Label>,
    pub final_label: Label,
    pub unparseable_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reasoning {
    pub reasons: Vec<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub decision: Decision,
    pub cited_chunk_ids: Vec<usize>,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    /// The source could not be lexed.
    Preprocess,
    /// Every backend call for the contract failed.
    Backend,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub contract_id: String,
    pub status: AuditStatus,
    pub final_label: Option<Label>,
    pub detector: Option<DetectorVerdict>,
    pub reasoning: Option<Reasoning>,
    pub verification: Option<Verification>,
    pub retrieved: Vec<ScoredChunk>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureKind>,
    pub error: Option<String>,
    pub elapsed_ms: u64,
}

impl AuditResult {
    fn failed(contract_id: &str, kind: FailureKind, error: String) -> Self {
        Self {
            contract_id: contract_id.to_string(),
            status: AuditStatus::Failed,
            final_label: None,
            detector: None,
            reasoning: None,
            verification: None,
            retrieved: Vec::new(),
            failure: Some(kind),
            error: Some(error),
            elapsed_ms: 0,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == AuditStatus::Ok
    }

    /// Copy with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            elapsed_ms: 0,
            ..self.clone()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit result serialization is infallible")
    }
}

/// Majority vote over parsed labels. Ties, including the no-votes case,
/// go to `Y`.
pub fn majority_vote(votes: &[Label]) -> Label {
    let yes = votes.iter().filter(|&&v| v == Label::Y).count();
    Label::from_vulnerable(yes >= votes.len() - yes)
}

#[derive(Debug, Clone)]
pub struct AuditConfig {
    pub templates: TemplateSet,
    pub retrieval_k: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            templates: TemplateSet::builtin(),
            retrieval_k: DEFAULT_RETRIEVAL_K,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }
}

/// Counts backend outcomes for one contract.
#[derive(Default)]
struct CallLog {
    ok: usize,
    last_error: Option<GatewayError>,
}

/// Everything needed to audit contracts. Shareable across threads.
pub struct Auditor {
    config: AuditConfig,
    gateway: Gateway,
    index: Arc<RetrievalIndex>,
    embedder: Arc<dyn Embedder>,
}

impl Auditor {
    pub fn new(
        config: AuditConfig,
        gateway: Gateway,
        index: Arc<RetrievalIndex>,
        embedder: Arc<dyn Embedder>,
    ) -> Result<Self, PipelineError> {
        if config.templates.detectors.is_empty() {
            return Err(PipelineError::Config("at least one detector prompt is required".into()));
        }
        if config.retrieval_k == 0 {
            return Err(PipelineError::Config("retrieval_k must be at least 1".into()));
        }
        if embedder.fingerprint() != index.embedder_fingerprint() {
            return Err(CorpusError::EmbedderMismatch {
                expected: index.embedder_fingerprint().to_string(),
                found: embedder.fingerprint(),
            }
            .into());
        }
        Ok(Self {
            config,
            gateway,
            index,
            embedder,
        })
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    fn request(&self, role: PromptRole, prompt: String) -> GenerationRequest {
        GenerationRequest {
            messages: vec![ChatMessage::system(role.system_message()), ChatMessage::user(prompt)],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            seed: self.config.seed,
        }
    }

    fn call(&self, request: &GenerationRequest, log: &mut CallLog) -> Option<String> {
        match self.gateway.generate(request) {
            Ok(resp) => {
                log.ok += 1;
                Some(resp.text)
            }
            Err(e) => {
                tracing::warn!(error = %e, "generation failed");
                log.last_error = Some(e);
                None
            }
        }
    }

    /// One generation per detector template. An unparseable reply is asked
    /// again once; a backend failure counts as unparseable straight away.
    pub fn run_detector(&self, contract: &NormalizedSource) -> DetectorVerdict {
        self.run_detector_logged(contract, &mut CallLog::default())
    }

    fn run_detector_logged(&self, contract: &NormalizedSource, log: &mut CallLog) -> DetectorVerdict {
        let mut votes = Vec::new();
        let mut unparseable_count = 0;
        for template in &self.config.templates.detectors {
            let request = self.request(
                PromptRole::Detector,
                template.render(&[("code", &contract.text)]),
            );
            let mut parsed = ParsedLabel::Unparseable;
            for _ in 0..2 {
                match self.call(&request, log) {
                    Some(text) => {
                        parsed = parse_label(&text);
                        if parsed != ParsedLabel::Unparseable {
                            break;
                        }
                    }
                    None => break,
                }
            }
            match parsed {
                ParsedLabel::Label(l) => votes.push(l),
                ParsedLabel::Unparseable => unparseable_count += 1,
            }
        }
        DetectorVerdict {
            final_label: majority_vote(&votes),
            votes,
            unparseable_count,
        }
    }

    pub fn run_reasoner(&self, contract: &NormalizedSource, detector_final: Label) -> Reasoning {
        self.run_reasoner_logged(contract, detector_final, &mut CallLog::default())
    }

    fn run_reasoner_logged(
        &self,
        contract: &NormalizedSource,
        detector_final: Label,
        log: &mut CallLog,
    ) -> Reasoning {
        let prompt = self
            .config
            .templates
            .reasoner
            .render(&[("code", &contract.text), ("verdict", detector_final.as_str())]);
        match self.call(&self.request(PromptRole::Reasoner, prompt), log) {
            Some(raw_text) => Reasoning {
                reasons: parse_reasons(&raw_text),
                raw_text,
            },
            None => Reasoning {
                reasons: vec![REASONER_UNAVAILABLE.to_string()],
                raw_text: String::new(),
            },
        }
    }

    /// Retrieval query is the reasons joined; falls back to the code when the
    /// reasons carry no embeddable words.
    pub fn retrieve(&self, contract: &NormalizedSource, reasoning: &Reasoning) -> Vec<ScoredChunk> {
        let query = reasoning.reasons.join("\n");
        let k = self.config.retrieval_k;
        self.index
            .search(self.embedder.as_ref(), &query, k)
            .or_else(|e| match e {
                CorpusError::EmptyQuery => {
                    self.index.search(self.embedder.as_ref(), &contract.text, k)
                }
                other => Err(other),
            })
            .unwrap_or_else(|e| {
                tracing::warn!(contract = %contract.id, error = %e, "retrieval failed");
                Vec::new()
            })
    }

    fn render_context(&self, retrieved: &[ScoredChunk]) -> String {
        if retrieved.is_empty() {
            return "(no reference excerpts retrieved)".to_string();
        }
        retrieved
            .iter()
            .filter_map(|s| self.index.chunk(s.chunk_id))
            .map(|c| {
                let mut heading = c.doc_id.clone();
                for s in &c.section_path {
                    heading.push_str(" > ");
                    heading.push_str(s);
                }
                format!("[chunk {}] {}\n{}", c.chunk_id, heading, c.text)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    /// Returns the verification, the retrieved chunks, and the final label.
    pub fn run_verificator(
        &self,
        contract: &NormalizedSource,
        reasoning: &Reasoning,
        detector_final: Label,
    ) -> (Verification, Vec<ScoredChunk>, Label) {
        self.run_verificator_logged(contract, reasoning, detector_final, &mut CallLog::default())
    }

    fn run_verificator_logged(
        &self,
        contract: &NormalizedSource,
        reasoning: &Reasoning,
        detector_final: Label,
        log: &mut CallLog,
    ) -> (Verification, Vec<ScoredChunk>, Label) {
        let retrieved = self.retrieve(contract, reasoning);
        let reasons = reasoning
            .reasons
            .iter()
            .map(|r| format!("- {r}"))
            .collect::<Vec<_>>()
            .join("\n");
        let context = self.render_context(&retrieved);
        let prompt = self.config.templates.verificator.render(&[
            ("code", &contract.text),
            ("reasons", &reasons),
            ("context", &context),
        ]);
        let verification = match self.call(&self.request(PromptRole::Verificator, prompt), log) {
            Some(raw_text) => {
                let allowed: Vec<usize> = retrieved.iter().map(|s| s.chunk_id).collect();
                Verification {
                    decision: parse_decision(&raw_text, detector_final),
                    cited_chunk_ids: parse_citations(&raw_text, &allowed),
                    raw_text,
                }
            }
            None => Verification {
                decision: Decision::Unparseable,
                cited_chunk_ids: Vec::new(),
                raw_text: String::new(),
            },
        };
        let final_label = match verification.decision {
            Decision::Overturn => detector_final.flipped(),
            Decision::Confirm | Decision::Unparseable => detector_final,
        };
        (verification, retrieved, final_label)
    }

    /// Full workflow for one contract. Errors are recorded in the result.
    pub fn audit(&self, source: &SourceUnit) -> AuditResult {
        let started = Instant::now();
        let mut result = catch_unwind(AssertUnwindSafe(|| self.audit_inner(source)))
            .unwrap_or_else(|panic| {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".to_string());
                AuditResult::failed(&source.id, FailureKind::Internal, format!("internal error: {msg}"))
            });
        result.elapsed_ms = started.elapsed().as_millis() as u64;
        result
    }

    fn audit_inner(&self, source: &SourceUnit) -> AuditResult {
        let contract = match preprocess(source) {
            Ok(c) => c,
            Err(e) => return AuditResult::failed(&source.id, FailureKind::Preprocess, e.to_string()),
        };
        let mut log = CallLog::default();
        let detector = self.run_detector_logged(&contract, &mut log);
        let reasoning = self.run_reasoner_logged(&contract, detector.final_label, &mut log);
        let (verification, retrieved, final_label) =
            self.run_verificator_logged(&contract, &reasoning, detector.final_label, &mut log);

        let mut result = AuditResult {
            contract_id: source.id.clone(),
            status: AuditStatus::Ok,
            final_label: Some(final_label),
            detector: Some(detector),
            reasoning: Some(reasoning),
            verification: Some(verification),
            retrieved,
            failure: None,
            error: None,
            elapsed_ms: 0,
        };
        if log.ok == 0 {
            let e = log.last_error.map_or_else(|| "no response".to_string(), |e| e.to_string());
            result.status = AuditStatus::Failed;
            result.final_label = None;
            result.failure = Some(FailureKind::Backend);
            result.error = Some(format!("every backend call failed: {e}"));
        }
        result
    }

    /// Audits every contract on up to `parallelism` threads. Output order
    /// matches input order.
    pub fn audit_batch(&self, contracts: &[SourceUnit], parallelism: usize) -> Vec<AuditResult> {
        let workers = parallelism.max(1).min(contracts.len());
        if workers <= 1 {
            return contracts.iter().map(|c| self.audit(c)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<AuditResult>>> = Mutex::new(vec![None; contracts.len()]);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(contract) = contracts.get(i) else { break };
                    let result = self.audit(contract);
                    slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .map(|r| r.expect("every slot is filled by a worker"))
            .collect()
    }
}
