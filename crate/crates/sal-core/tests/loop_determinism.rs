//! Cross-run determinism and end-to-end safety properties of the benchmark
//! loop.

use sal_core::chain::{normalize_ledger_bytes, replay_ledger_bytes, ExecutedField};
use sal_core::evaluator::Decision;
use sal_core::harness::{benchmark_policy_set, run_loop, AgentMode, ScenarioSpec};
use sal_core::membrane::IdentityScanner;

#[test]
fn identical_scenarios_yield_identical_normalized_ledgers() {
    let spec = ScenarioSpec::scaled(42, 300);
    let set = benchmark_policy_set();
    let a = run_loop(&spec, &set).unwrap();
    let b = run_loop(&spec, &set).unwrap();
    let norm_a = normalize_ledger_bytes(&a.ledger.to_jsonl_bytes()).unwrap();
    let norm_b = normalize_ledger_bytes(&b.ledger.to_jsonl_bytes()).unwrap();
    assert_eq!(norm_a, norm_b);

    // Reports agree on everything except wall-clock latency fields.
    let mut report_b = b.report.clone();
    report_b.latency_median_ns = a.report.latency_median_ns;
    report_b.latency_p95_ns = a.report.latency_p95_ns;
    report_b.stage_medians_ns = a.report.stage_medians_ns;
    assert_eq!(a.report, report_b);
}

#[test]
fn different_seeds_yield_different_ledgers() {
    let set = benchmark_policy_set();
    let a = run_loop(&ScenarioSpec::scaled(1, 80), &set).unwrap();
    let b = run_loop(&ScenarioSpec::scaled(2, 80), &set).unwrap();
    assert_ne!(
        normalize_ledger_bytes(&a.ledger.to_jsonl_bytes()).unwrap(),
        normalize_ledger_bytes(&b.ledger.to_jsonl_bytes()).unwrap()
    );
}

#[test]
fn no_adversarial_intent_ever_executes() {
    let spec = ScenarioSpec::scaled(11, 400);
    let outcome = run_loop(&spec, &benchmark_policy_set()).unwrap();
    for (record, mode) in outcome.ledger.records().iter().zip(&outcome.modes) {
        if *mode != AgentMode::Benign {
            assert_eq!(record.executed_action, ExecutedField::Withheld);
            assert_ne!(record.verdict.decision, Decision::Approved);
        }
    }
    assert_eq!(outcome.report.executed, spec.benign_count);
    assert_eq!(outcome.final_state.epoch, spec.benign_count);
}

#[test]
fn executed_actions_join_back_to_approved_records() {
    let spec = ScenarioSpec::scaled(5, 200);
    let outcome = run_loop(&spec, &benchmark_policy_set()).unwrap();
    let mut executed = 0u64;
    for record in outcome.ledger.records() {
        if let ExecutedField::Executed(action) = &record.executed_action {
            executed += 1;
            assert_eq!(record.verdict.decision, Decision::Approved);
            assert_eq!(action.source_intent_hash(), record.verdict.intent_hash);
            assert_eq!(
                action.source_intent_hash(),
                sal_core::canonical::sha256_hex(record.intent_canonical.as_bytes())
            );
        }
    }
    assert_eq!(executed, outcome.report.approved);
    assert_eq!(outcome.credentials.len() as u64, executed);
    assert!(outcome.credentials.iter().all(|c| c.consumed));
}

#[test]
fn replay_of_a_seeded_run_matches_exactly() {
    let spec = ScenarioSpec::scaled(13, 250);
    let set = benchmark_policy_set();
    let outcome = run_loop(&spec, &set).unwrap();
    let replay = replay_ledger_bytes(&outcome.ledger.to_jsonl_bytes(), &set).unwrap();
    assert_eq!(replay.matched, 250);
    assert!(replay.is_clean());
}

#[test]
fn views_stay_scrubbed_across_the_whole_run() {
    let spec = ScenarioSpec::scaled(21, 150);
    let outcome = run_loop(&spec, &benchmark_policy_set()).unwrap();
    assert_eq!(outcome.scrub_leak_total, 0);
    // The final view re-rendered from the final state is also clean.
    let scanner = IdentityScanner::new(&outcome.final_state);
    let (view, _) = sal_core::membrane::project(&outcome.final_state, 99);
    assert_eq!(scanner.leak_count(&view.to_canonical_bytes()), 0);
}
