//! Regenerates `tests/fixtures/replay/`: a 60-contract labeled dataset, the
//! reference index, and a recorded script of every role transcript.
//!
//! The transcripts come from a planned backend whose replies are fixed per
//! contract, so the audited outcome is 30 TP, 12 TN, 18 FP, 0 FN. Some
//! verdicts are only reached through a verificator overturn, some detector
//! replies are unparseable, and some votes tie.
//!
//! Run with `cargo run --example gen_replay_fixture [out_dir]`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regex::Regex;
use smartllm::corpus::{load_corpus_dir, ChunkParams, HashedTfEmbedder, RetrievalIndex};
use smartllm::dataset::{write_jsonl, ContractSample, GroundTruth, VulnType};
use smartllm::gateway::{
    Backend, ChatRole, Gateway, GatewayError, GenerationRequest, GenerationResponse,
    RecordingBackend,
};
use smartllm::pipeline::{AuditConfig, Auditor, PromptRole, TemplateSet};

/// What the model says about one contract.
#[derive(Clone)]
struct Plan {
    /// One reply per detector template; `None` is an unparseable reply.
    detector: [Option<bool>; 3],
    reasons: Vec<&'static str>,
    overturn: bool,
}

fn reentrancy(i: usize) -> String {
    format!(
        r#"pragma solidity ^0.8.0;

// Ether vault variant {i}
contract EtherVault{i:02} {{
    mapping(address => uint256) public deposits;

    function deposit() external payable {{
        deposits[msg.sender] += msg.value;
    }}

    /// Sends the caller's deposit back.
    function withdraw() external {{
        uint256 amount = deposits[msg.sender];
        require(amount > {min}, "nothing to withdraw");
        (bool ok, ) = msg.sender.call{{value: amount}}("");
        require(ok, "send failed");
        deposits[msg.sender] = 0;
    }}
}}
"#,
        min = i % 3
    )
}

fn access_control(i: usize) -> String {
    format!(
        r#"pragma solidity ^0.8.0;

contract RewardToken{i:02} {{
    mapping(address => uint256) public balanceOf;
    uint256 public totalSupply;
    address public owner;

    constructor() {{
        owner = msg.sender;
    }}

    /* anyone can mint: no owner check */
    function mint(address to, uint256 amount) external {{
        balanceOf[to] += amount * {scale};
        totalSupply += amount * {scale};
    }}

    function setOwner(address next) external {{
        owner = next;
    }}
}}
"#,
        scale = i + 1
    )
}

fn logic_error(i: usize) -> String {
    format!(
        r#"pragma solidity ^0.8.0;

contract LedgerToken{i:02} {{
    mapping(address => uint256) public balanceOf;
    uint256 public totalSupply = {supply};

    function transfer(address to, uint256 value) external returns (bool) {{
        require(balanceOf[msg.sender] >= value, "balance");
        balanceOf[msg.sender] -= value;
        balanceOf[to] += value;
        balanceOf[to] += value / {divisor};
        return true;
    }}
}}
"#,
        supply = 1_000_000 + i,
        divisor = 2 + i
    )
}

fn safe(i: usize) -> String {
    format!(
        r#"pragma solidity ^0.8.0;

contract CheckedToken{i:02} {{
    mapping(address => uint256) public balanceOf;
    mapping(address => mapping(address => uint256)) public allowance;
    uint256 public totalSupply = {supply};

    event Transfer(address indexed from, address indexed to, uint256 value);

    function transfer(address to, uint256 value) external returns (bool) {{
        require(balanceOf[msg.sender] >= value, "balance");
        balanceOf[msg.sender] -= value;
        balanceOf[to] += value;
        emit Transfer(msg.sender, to, value);
        return true;
    }}

    function transferFrom(address from, address to, uint256 value) external returns (bool) {{
        require(balanceOf[from] >= value, "balance");
        require(allowance[from][msg.sender] >= value, "allowance");
        allowance[from][msg.sender] -= value;
        balanceOf[from] -= value;
        balanceOf[to] += value;
        emit Transfer(from, to, value);
        return true;
    }}
}}
"#,
        supply = 500_000 + 7 * i
    )
}

const Y: Option<bool> = Some(true);
const N: Option<bool> = Some(false);
const U: Option<bool> = None;

fn corpus() -> Vec<(ContractSample, Plan)> {
    let mut out = Vec::new();
    let mut push = |id: String, source: String, vuln_type: VulnType, plan: Plan| {
        let label = if vuln_type == VulnType::None { GroundTruth::Safe } else { GroundTruth::Vulnerable };
        out.push((ContractSample { id, source, label, vuln_type }, plan));
    };

    let vuln_plan = |i: usize, reasons: Vec<&'static str>| -> Plan {
        // 0..3 reach Y only through an overturn; 3 and 4 tie after one
        // unparseable reply; the rest are clear detections.
        let detector = match i {
            0..=2 => [N, N, Y],
            3 => [U, Y, N],
            4 => [Y, U, N],
            5 => [Y, Y, N],
            _ => [Y, Y, Y],
        };
        Plan { detector, reasons, overturn: i <= 2 }
    };

    for i in 0..10 {
        let plan = vuln_plan(i % 10, vec![
            "external call sends ether before the deposit is zeroed",
            "a re-entrant fallback can withdraw repeatedly while the balance is stale",
        ]);
        push(format!("reentrancy-{i:02}"), reentrancy(i), VulnType::Reentrancy, plan);
    }
    for i in 0..8 {
        let plan = vuln_plan((i + 3) % 10, vec![
            "mint has no access control so any caller can create tokens",
            "setOwner lets anyone take over ownership",
        ]);
        push(format!("access-control-{i:02}"), access_control(i), VulnType::AccessControl, plan);
    }
    for i in 0..12 {
        let plan = vuln_plan((i + 5) % 12, vec![
            "transfer credits the recipient twice",
            "the sum of balances drifts away from the total supply",
        ]);
        push(format!("logic-error-{i:02}"), logic_error(i), VulnType::LogicError, plan);
    }
    for i in 0..30 {
        let plan = match i {
            // true negatives
            0..=7 => Plan { detector: [N, N, N], reasons: vec!["balance and allowance are checked before every debit"], overturn: false },
            8..=11 => Plan { detector: [Y, Y, N], reasons: vec!["transferFrom may lack an allowance check"], overturn: true },
            // false positives
            12..=14 => Plan { detector: [N, N, Y], reasons: vec!["transfer emits events but the reviewer doubts the balance check"], overturn: true },
            15..=17 => Plan { detector: [U, Y, N], reasons: vec!["allowance decrement ordering looks unsafe"], overturn: false },
            _ => Plan { detector: [Y, Y, Y], reasons: vec!["transferFrom updates the allowance after the balance check which may allow a missing allowance check"], overturn: false },
        };
        push(format!("safe-{i:02}"), safe(i), VulnType::None, plan);
    }
    out
}

/// Replies according to the plan of the contract named in the prompt.
struct PlannedBackend {
    plans: HashMap<String, Plan>,
    detector_prefixes: Vec<String>,
}

impl PlannedBackend {
    fn plan_for(&self, prompt: &str) -> Result<&Plan, GatewayError> {
        let re = Regex::new(r"\bcontract (\w+) \{").unwrap();
        let name = re
            .captures(prompt)
            .map(|c| c[1].to_string())
            .ok_or_else(|| GatewayError::MissingScript("no contract name in prompt".into()))?;
        self.plans
            .get(&name)
            .ok_or_else(|| GatewayError::MissingScript(format!("no plan for {name}")))
    }
}

impl Backend for PlannedBackend {
    fn id(&self) -> &str {
        "planned"
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
            .expect("pipeline always sends a role system message");
        let prompt = request.last_user_content();
        let plan = self.plan_for(prompt)?;
        let detector_final = {
            let yes = plan.detector.iter().filter(|v| **v == Y).count();
            let no = plan.detector.iter().filter(|v| **v == N).count();
            yes >= no
        };
        let text = match role {
            PromptRole::Detector => {
                let slot = self
                    .detector_prefixes
                    .iter()
                    .position(|p| prompt.starts_with(p.as_str()))
                    .expect("prompt built from a builtin detector template");
                match plan.detector[slot] {
                    Some(true) => "Y".to_string(),
                    Some(false) => "N".to_string(),
                    None => "I cannot tell from this excerpt.".to_string(),
                }
            }
            PromptRole::Reasoner => plan.reasons.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n"),
            PromptRole::Verificator => {
                let cited: Vec<String> = Regex::new(r"\[chunk (\d+)\]")
                    .unwrap()
                    .captures_iter(prompt)
                    .take(2)
                    .map(|c| format!("[chunk {}]", &c[1]))
                    .collect();
                let verdict = if plan.overturn { "OVERTURN" } else { "CONFIRM" };
                let direction = if detector_final != plan.overturn { "vulnerable" } else { "not vulnerable" };
                format!("{verdict}\nAgainst {} the contract is {direction}.", cited.join(" and "))
            }
        };
        Ok(GenerationResponse {
            text,
            prompt_tokens: 0,
            completion_tokens: 0,
            backend_id: self.id().to_string(),
            truncated: false,
        })
    }
}

fn contract_name(source: &str) -> String {
    Regex::new(r"\bcontract (\w+) \{").unwrap().captures(source).unwrap()[1].to_string()
}

fn main() -> anyhow::Result<()> {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| manifest.join("tests/fixtures/replay"), PathBuf::from);
    std::fs::create_dir_all(&out)?;

    let entries = corpus();
    let samples: Vec<ContractSample> = entries.iter().map(|(s, _)| s.clone()).collect();
    write_jsonl(&out.join("dataset.jsonl"), &samples)?;

    let chunks = load_corpus_dir(&manifest.join("assets/corpus"), ChunkParams::default())?;
    let index = RetrievalIndex::build(chunks, &HashedTfEmbedder::default())?;
    index.save(&out.join("index.json"))?;

    let templates = TemplateSet::builtin();
    let planned = PlannedBackend {
        plans: entries.iter().map(|(s, p)| (contract_name(&s.source), p.clone())).collect(),
        detector_prefixes: templates
            .detectors
            .iter()
            .map(|t| t.template.split("{code}").next().unwrap().to_string())
            .collect(),
    };
    let recorder = Arc::new(RecordingBackend::new(Arc::new(planned)));
    let auditor = Auditor::new(
        AuditConfig::default(),
        Gateway::new(recorder.clone()),
        Arc::new(index),
        Arc::new(HashedTfEmbedder::default()),
    )?;
    for sample in &samples {
        recorder.set_note(Some(sample.id.clone()));
        let result = auditor.audit(&sample.source_unit());
        anyhow::ensure!(result.is_ok(), "{} failed: {:?}", sample.id, result.error);
    }
    recorder.script().save(&out.join("script.json"))?;

    let config = serde_json::json!({
        "backend": { "kind": "scripted", "script_path": "script.json" },
        "index_path": "index.json",
        "detector_prompts": 3,
        "retrieval_k": 4,
    });
    write(&out.join("config.json"), &(serde_json::to_string_pretty(&config)? + "\n"))?;
    println!("wrote {} contracts, {} script entries to {}", samples.len(), recorder.script().len(), out.display());
    Ok(())
}

fn write(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}
