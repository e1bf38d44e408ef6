mod common;

use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use smartllm::corpus::{HashedTfEmbedder, RetrievalIndex};
use smartllm::gateway::{Gateway, HeuristicBackend, Rule};
use smartllm::pipeline::{AuditConfig, Auditor};
use smartllm::preprocess::SourceUnit;
use smartllm::Label;

fn index() -> &'static Arc<RetrievalIndex> {
    static INDEX: OnceLock<Arc<RetrievalIndex>> = OnceLock::new();
    INDEX.get_or_init(common::scenario_index)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn recorded_scenarios_replay_with_invariants(s in common::scenario()) {
        if let Err(e) = common::check_scenario(&s, index()) {
            prop_assert!(false, "{}", e);
        }
    }
}

#[test]
fn unchecked_token_with_heuristic_backend() {
    let raw = std::fs::read_to_string(common::fixture("unchecked_token.sol")).unwrap();
    let auditor = Auditor::new(
        AuditConfig::default(),
        Gateway::new(Arc::new(HeuristicBackend)),
        index().clone(),
        Arc::new(HashedTfEmbedder::default()),
    )
    .unwrap();
    let r = auditor.audit(&SourceUnit::new("unchecked_token", raw.clone()));
    assert_eq!(r.final_label, Some(Label::Y));
    let reasons = r.reasoning.unwrap().reasons.join("\n");
    assert!(reasons.contains(Rule::NoBalanceCheck.name()), "{reasons}");
    assert!(reasons.contains(Rule::MissingAllowance.name()), "{reasons}");

    let verdict = smartllm::gateway::analyze(&raw).unwrap();
    let fired: Vec<_> = verdict.fired.iter().map(|(r, fns)| (r.name(), fns.clone())).collect();
    assert_eq!(
        fired,
        vec![
            ("no-balance-check", vec!["transfer".to_string(), "transferFrom".to_string()]),
            ("missing-allowance", vec!["transferFrom".to_string()]),
        ]
    );
}
