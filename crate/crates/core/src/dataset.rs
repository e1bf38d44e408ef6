//! Labeled contract corpus: loading, stratified train/test splitting, and
//! export of instruction-tuning records and the fine-tuning configuration.
//!
//! # Split algorithm
//!
//! Samples are grouped into strata keyed `"<label>/<vuln_type>"`, visited in
//! ascending key order. Each stratum's ids are sorted, then shuffled with
//! Fisher–Yates driven by ChaCha8 (key = seed as little-endian `u64` in the
//! first eight bytes, rest zero): for `i` from `n-1` down to `1`, swap `i`
//! with `next_u64() % (i + 1)`. The first `floor(ratio * n)` shuffled ids go
//! to train. If the total is still below `round(ratio * N)`, strata with a
//! fractional share each give one more id to train, in ascending key order,
//! until the target is met.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::PromptRole;
use crate::preprocess::{preprocess, PreprocessError, SourceUnit};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    SchemaError { line: usize, message: String },
    #[error("sample `{0}`: label and vuln_type disagree")]
    LabelTypeInconsistency(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train ratio must be strictly between 0 and 1, got {0}")]
    InvalidRatio(f64),
    #[error("sample `{id}`: {source}")]
    Preprocess {
        id: String,
        #[source]
        source: PreprocessError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundTruth {
    Vulnerable,
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VulnType {
    Reentrancy,
    AccessControl,
    LogicError,
    None,
}

impl VulnType {
    pub fn name(self) -> &'static str {
        match self {
            VulnType::Reentrancy => "reentrancy",
            VulnType::AccessControl => "access_control",
            VulnType::LogicError => "logic_error",
            VulnType::None => "none",
        }
    }

    fn describe(self) -> &'static str {
        match self {
            VulnType::Reentrancy => "a re-entrancy vulnerability: an external call happens before state is updated, so the callee can re-enter and repeat the operation",
            VulnType::AccessControl => "an access control vulnerability: a privileged function can be invoked without sufficient authorization checks",
            VulnType::LogicError => "a logic error: the code's arithmetic or bookkeeping allows behaviour the contract did not intend",
            VulnType::None => "no re-entrancy, access control, or logic error vulnerability",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractSample {
    pub id: String,
    pub source: String,
    pub label: GroundTruth,
    pub vuln_type: VulnType,
}

impl ContractSample {
    pub fn stratum(&self) -> String {
        let label = match self.label {
            GroundTruth::Vulnerable => "vulnerable",
            GroundTruth::Safe => "safe",
        };
        format!("{label}/{}", self.vuln_type.name())
    }

    pub fn is_consistent(&self) -> bool {
        (self.label == GroundTruth::Vulnerable) == (self.vuln_type != VulnType::None)
    }

    pub fn source_unit(&self) -> SourceUnit {
        SourceUnit::new(self.id.clone(), self.source.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Sample counts keyed by stratum (`"<label>/<vuln_type>"`).
    pub strata: BTreeMap<String, usize>,
    pub vulnerable: usize,
    pub safe: usize,
    pub total: usize,
}

impl DatasetManifest {
    pub fn from_samples(samples: &[ContractSample]) -> Self {
        let mut m = Self::default();
        for s in samples {
            *m.strata.entry(s.stratum()).or_default() += 1;
            match s.label {
                GroundTruth::Vulnerable => m.vulnerable += 1,
                GroundTruth::Safe => m.safe += 1,
            }
        }
        m.total = samples.len();
        m
    }

    pub fn count(&self, stratum: &str) -> usize {
        self.strata.get(stratum).copied().unwrap_or(0)
    }
}

/// Parses JSON-lines text. Blank lines are skipped; line numbers in errors
/// are 1-based.
pub fn parse_dataset(text: &str) -> Result<(Vec<ContractSample>, DatasetManifest), DatasetError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: ContractSample =
            serde_json::from_str(line).map_err(|e| DatasetError::SchemaError {
                line: i + 1,
                message: e.to_string(),
            })?;
        if sample.id.is_empty() || sample.source.is_empty() {
            return Err(DatasetError::SchemaError {
                line: i + 1,
                message: "id and source must be non-empty".into(),
            });
        }
        if !sample.is_consistent() {
            return Err(DatasetError::LabelTypeInconsistency(sample.id));
        }
        if !seen.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    let manifest = DatasetManifest::from_samples(&samples);
    Ok((samples, manifest))
}

pub fn load_dataset(path: &Path) -> Result<(Vec<ContractSample>, DatasetManifest), DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_dataset(&text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut s = serde_json::to_string_pretty(self).expect("split serialization is infallible");
        s.push('\n');
        std::fs::write(path, s).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

// Guards against 0.8 * 40 landing a hair under 32.
const RATIO_EPS: f64 = 1e-9;

pub fn stratified_split(
    samples: &[ContractSample],
    train_ratio: f64,
    seed: u64,
) -> Result<Split, DatasetError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(train_ratio));
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }

    let mut strata: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in samples {
        strata.entry(s.stratum()).or_default().push(s.id.clone());
    }

    let mut plans: Vec<(Vec<String>, usize, bool)> = strata
        .into_values()
        .map(|mut ids| {
            ids.sort();
            seeded_shuffle(&mut ids, seed);
            let exact = train_ratio * ids.len() as f64;
            let take = (exact + RATIO_EPS).floor() as usize;
            let fractional = exact - take as f64 > RATIO_EPS;
            (ids, take, fractional)
        })
        .collect();

    let target = (train_ratio * samples.len() as f64 + RATIO_EPS).round() as usize;
    let mut allocated: usize = plans.iter().map(|p| p.1).sum();
    for plan in plans.iter_mut() {
        if allocated >= target {
            break;
        }
        if plan.2 {
            plan.1 += 1;
            allocated += 1;
        }
    }

    let mut train_ids = Vec::new();
    let mut test_ids = Vec::new();
    for (ids, take, _) in plans {
        let (train, test) = ids.split_at(take);
        train_ids.extend_from_slice(train);
        test_ids.extend_from_slice(test);
    }
    Ok(Split {
        seed,
        train_ids,
        test_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

fn role_instruction(role: PromptRole) -> &'static str {
    match role {
        PromptRole::Detector => "Classify the following Solidity smart contract as vulnerable (Y) or non-vulnerable (N).",
        PromptRole::Reasoner => "Explain the reasons that support the classification of the following Solidity smart contract.",
        PromptRole::Verificator => "Verify the audit finding for the following Solidity smart contract against the ERC-20 standard and state whether it is confirmed.",
    }
}

/// One `{instruction, input, output}` record per (sample, role), samples in
/// input order and roles in the given order. Inputs are the preprocessed
/// sources.
pub fn export_instructions(
    samples: &[ContractSample],
    roles: &[PromptRole],
) -> Result<Vec<InstructionRecord>, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut records = Vec::with_capacity(samples.len() * roles.len());
    for sample in samples {
        let code = preprocess(&sample.source_unit())
            .map_err(|source| DatasetError::Preprocess {
                id: sample.id.clone(),
                source,
            })?
            .text;
        let verdict = if sample.label == GroundTruth::Vulnerable { "Y" } else { "N" };
        for &role in roles {
            let output = match role {
                PromptRole::Detector => verdict.to_string(),
                PromptRole::Reasoner => format!("The contract has {}.", sample.vuln_type.describe()),
                PromptRole::Verificator => format!("CONFIRM: {}", sample.stratum()),
            };
            let input = match role {
                PromptRole::Detector => code.clone(),
                PromptRole::Reasoner | PromptRole::Verificator => {
                    format!("Classification: {verdict}\n\n{code}")
                }
            };
            records.push(InstructionRecord {
                instruction: role_instruction(role).to_string(),
                input,
                output,
            });
        }
    }
    Ok(records)
}

/// Hyperparameters for the external QLoRA fine-tuning run. Only emitted;
/// no training happens here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub method_name: String,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub epochs: u32,
    pub quantization_bits: u32,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            method_name: "qlora".to_string(),
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 2,
            quantization_bits: 4,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 || self.quantization_bits == 0 {
            return Err("batch_size, epochs and quantization_bits must be positive".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let mut s = serde_json::to_string_pretty(self).expect("config serialization is infallible");
        s.push('\n');
        std::fs::write(path, s).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Writes `config` to `path`.
pub fn emit_finetune_config(path: &Path, config: &FinetuneConfig) -> Result<(), DatasetError> {
    config.validate().map_err(|message| DatasetError::Format {
        path: path.to_path_buf(),
        message,
    })?;
    config.save(path)
}
