//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `--nocapture`). Tolerances are pinned in the
//! assertions; CLI-facing criteria drive the real `sal` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use sal_core::chain::{normalize_ledger_bytes, verify_ledger_bytes, ExecutedField};
use sal_core::evaluator::{
    evaluate_policy, Decision, PolicyEffect, PolicyRule, PolicySet, UNRESOLVED_TARGET_RULE,
};
use sal_core::harness::{benchmark_policy_set, run_loop, BenchReport, RunOutcome, ScenarioSpec};
use sal_core::intent::{ActionType, Intent, Justification, ParamValue, ALL_ACTIONS};
use sal_core::membrane::{
    estimate_identity_leakage, estimate_identity_leakage_leaky, project, MappingCache,
};
use sal_core::state::{
    generate_state, NodeRecord, NodeStatus, Token, TrueState, ALL_CLASSES, ALL_REGIONS,
};

const SEED: u64 = 42;
const SCALED_TOTAL: u64 = 1000;

fn sal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(args)
        .current_dir(dir)
        .env_remove("SAL_SEED")
        .output()
        .expect("sal runs")
}

struct BenchFixture {
    dir: PathBuf,
    elapsed: Duration,
    ledger_bytes: Vec<u8>,
    report: BenchReport,
}

impl BenchFixture {
    fn ledger_path(&self) -> PathBuf {
        self.dir.join("ledger.jsonl")
    }

    fn policy_path(&self) -> PathBuf {
        self.dir.join("policy.json")
    }
}

fn run_cli_bench(dir: &Path, total: u64) -> (Duration, Vec<u8>, BenchReport) {
    let out = sal(&["gen-policy", "--out", "policy.json"], dir);
    assert_eq!(out.status.code(), Some(0));
    let started = Instant::now();
    let out = sal(
        &[
            "bench",
            "--seed",
            &SEED.to_string(),
            "--nodes",
            "100",
            "--intents",
            &total.to_string(),
            "--policy",
            "policy.json",
            "--ledger",
            "ledger.jsonl",
            "--report",
            "report.json",
        ],
        dir,
    );
    let elapsed = started.elapsed();
    assert_eq!(
        out.status.code(),
        Some(0),
        "bench gate: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let ledger_bytes = std::fs::read(dir.join("ledger.jsonl")).expect("ledger written");
    let report_bytes = std::fs::read(dir.join("report.json")).expect("report written");
    let report = BenchReport::from_bytes(&report_bytes).expect("report parses");
    (elapsed, ledger_bytes, report)
}

/// The scaled 1,000-intent benchmark, run once through the CLI and shared by
/// several criteria.
fn fixture() -> &'static BenchFixture {
    static FIXTURE: OnceLock<BenchFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir").keep();
        let (elapsed, ledger_bytes, report) = run_cli_bench(&dir, SCALED_TOTAL);
        BenchFixture {
            dir,
            elapsed,
            ledger_bytes,
            report,
        }
    })
}

/// The same scenario run through the library, for joins that need the final
/// state and credential audit.
fn library_outcome() -> &'static RunOutcome {
    static OUTCOME: OnceLock<RunOutcome> = OnceLock::new();
    OUTCOME.get_or_init(|| {
        let spec = ScenarioSpec::scaled(SEED, SCALED_TOTAL);
        run_loop(&spec, &benchmark_policy_set()).expect("library run")
    })
}

fn pass(line: &str) {
    println!("ACCEPTANCE {line}: PASS");
}

#[test]
fn criterion_1_safety_effectiveness() {
    let f = fixture();
    assert_eq!(f.report.blocked_policy, 232);
    assert_eq!(f.report.blocked_consistency, 18);
    assert_eq!(f.report.executed, 750);
    assert_eq!(f.report.approved, 750);
    assert_eq!(f.report.blocking_rate_ppm, 1_000_000);
    assert!(
        f.elapsed < Duration::from_secs(30),
        "scaled bench took {:?}",
        f.elapsed
    );

    // Full-scale configuration: exact attribution within the time budget.
    let dir = tempfile::tempdir().unwrap();
    let (elapsed, _, report) = run_cli_bench(dir.path(), 10_000);
    assert_eq!(report.blocked_policy, 2325);
    assert_eq!(report.blocked_consistency, 175);
    assert_eq!(report.executed, 7500);
    assert_eq!(report.blocking_rate_ppm, 1_000_000);
    assert!(elapsed < Duration::from_secs(300), "full bench took {elapsed:?}");

    pass("C1 safety-effectiveness (750/232/18 scaled, 7500/2325/175 full, blocking 1.0)");
}

#[test]
fn criterion_2_replay_verification() {
    let f = fixture();
    let out = sal(
        &[
            "replay",
            "--ledger",
            f.ledger_path().to_str().unwrap(),
            "--policy",
            f.policy_path().to_str().unwrap(),
        ],
        &f.dir,
    );
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains(&format!("matched {SCALED_TOTAL}/{SCALED_TOTAL}")),
        "stdout: {stdout}"
    );
    pass("C2 replay-verification (matched 1000/1000, zero mismatches)");
}

#[test]
fn criterion_3_tamper_evidence() {
    let f = fixture();
    let bytes = &f.ledger_bytes;
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut detected = 0u32;
    for trial in 0..200 {
        let mut mutated = bytes.clone();
        let position = (rng.next_u64() as usize) % mutated.len();
        let old = mutated[position];
        let mut new = old;
        while new == old {
            new = (rng.next_u64() & 0xff) as u8;
        }
        mutated[position] = new;

        let report = verify_ledger_bytes(&mutated);
        assert!(!report.ok, "trial {trial}: byte {position} undetected");
        let line = bytes[..position].iter().filter(|b| **b == b'\n').count();
        let expected = line.saturating_sub(1) as u64;
        assert_eq!(
            report.first_bad_index,
            Some(expected),
            "trial {trial}: wrong first_bad_index for byte {position}"
        );
        detected += 1;
    }
    assert_eq!(detected, 200);

    // Spot-check the CLI surface agrees.
    let mut mutated = bytes.clone();
    let mid = mutated.len() / 2;
    mutated[mid] ^= 0x01;
    std::fs::write(f.dir.join("mutated.jsonl"), &mutated).unwrap();
    let out = sal(&["verify", "--ledger", "mutated.jsonl"], &f.dir);
    assert_eq!(out.status.code(), Some(3));

    pass("C3 tamper-evidence (200/200 single-byte mutations detected, correct indices)");
}

#[test]
fn criterion_4_latency_decomposition() {
    let f = fixture();
    let r = &f.report;
    assert!(
        r.latency_median_ns <= 25_000_000,
        "median {} ns exceeds the 25 ms budget",
        r.latency_median_ns
    );
    for (i, ns) in r.stage_medians_ns.iter().enumerate() {
        assert!(*ns > 0, "stage {i} median is zero");
    }
    let policy = r.stage_medians_ns[1];
    for (i, ns) in r.stage_medians_ns.iter().enumerate() {
        if i != 1 {
            assert!(
                policy >= *ns,
                "policy stage ({policy} ns) must dominate stage {i} ({ns} ns)"
            );
        }
    }
    let stage_sum: u64 = r.stage_medians_ns.iter().sum();
    assert!(
        stage_sum <= r.latency_median_ns * 12 / 10,
        "stage medians {stage_sum} inconsistent with total median {}",
        r.latency_median_ns
    );
    pass("C4 latency (median <= 25 ms, four nonzero stages, policy dominant)");
}

#[test]
fn criterion_5_identity_isolation() {
    let mi_real = estimate_identity_leakage(10_000, 2, SEED).unwrap();
    assert!(mi_real <= 0.05, "real membrane leaks {mi_real} bits");
    let mi_leaky = estimate_identity_leakage_leaky(10_000, 2, SEED).unwrap();
    assert!(mi_leaky >= 0.9, "estimator missed the leaky fixture: {mi_leaky}");
    assert_eq!(
        library_outcome().scrub_leak_total,
        0,
        "identity substrings surfaced in an emitted view"
    );
    pass("C5 identity-isolation (<= 0.05 bits real, >= 0.9 bits leaky fixture, scrub clean)");
}

#[test]
fn criterion_6_policy_bounded_execution() {
    let outcome = library_outcome();
    assert_eq!(
        outcome.final_state.epoch, outcome.report.approved,
        "epoch increments must equal the approved count"
    );
    let mut executed = 0u64;
    for record in outcome.ledger.records() {
        if let ExecutedField::Executed(action) = &record.executed_action {
            executed += 1;
            assert_eq!(record.verdict.decision, Decision::Approved);
            assert_eq!(
                action.source_intent_hash(),
                sal_core::canonical::sha256_hex(record.intent_canonical.as_bytes()),
                "executed action must bind to its approved intent"
            );
        }
    }
    assert_eq!(executed, outcome.report.approved, "zero orphan executions");
    assert_eq!(outcome.credentials.len() as u64, executed);
    assert!(outcome.credentials.iter().all(|c| c.consumed && c.ttl_actions == 1));
    pass("C6 policy-bounded-execution (epoch == approved, zero orphans)");
}

// ---------------------------------------------------------------------------
// Criterion 7: an independent brute-force oracle for the policy stage.
// Reads typed state directly and re-derives every rule decision naively;
// shares no code with the engine's document/interpreter path.
// ---------------------------------------------------------------------------

fn naive_glob(pattern: &[u8], value: &[u8]) -> bool {
    match pattern.first() {
        None => value.is_empty(),
        Some(b'*') => {
            naive_glob(&pattern[1..], value)
                || (!value.is_empty() && naive_glob(pattern, &value[1..]))
        }
        Some(c) => value.first() == Some(c) && naive_glob(&pattern[1..], &value[1..]),
    }
}

fn oracle_rule_matches(
    rule: &PolicyRule,
    action: ActionType,
    node: &NodeRecord,
    state: &TrueState,
) -> bool {
    if !naive_glob(rule.match_action.as_bytes(), action.wire_name().as_bytes()) {
        return false;
    }
    let mt = &rule.match_target;
    if let Some(classes) = &mt.node_class_in {
        if !classes.contains(&node.node_class) {
            return false;
        }
    }
    if let Some(regions) = &mt.region_in {
        if !regions.contains(&node.region) {
            return false;
        }
    }
    if let Some(statuses) = &mt.status_in {
        if !statuses.contains(&node.status) {
            return false;
        }
    }
    if let Some(tags) = &mt.tags_all {
        if !tags.iter().all(|t| node.tags.contains(t)) {
            return false;
        }
    }
    if let Some(tags) = &mt.tags_none {
        if tags.iter().any(|t| node.tags.contains(t)) {
            return false;
        }
    }
    if let Some(permitted) = &rule.region_restriction {
        if permitted.contains(&node.region) {
            return false;
        }
    }
    if let Some(blast) = &rule.blast_radius_limit {
        if action != ActionType::TerminateNode || node.node_class != blast.node_class {
            return false;
        }
        let total = state
            .nodes
            .values()
            .filter(|n| n.node_class == blast.node_class)
            .count() as u64;
        let terminated = state
            .nodes
            .values()
            .filter(|n| {
                n.node_class == blast.node_class && n.status == NodeStatus::Terminated
            })
            .count() as u64;
        if total > 0 && (terminated + 1) * 1_000_000 <= blast.max_fraction_milli * total {
            return false;
        }
    }
    true
}

fn oracle_evaluate(
    intent: &Intent,
    state: &TrueState,
    cache: &MappingCache,
    policies: &PolicySet,
) -> (bool, Vec<String>) {
    // Resolve by exhaustive forward search; the oracle has no access to the
    // privileged reverse map.
    let node = state
        .nodes
        .values()
        .find(|n| cache.token_for(&n.node_id) == Some(&intent.target_token));
    let node = match node {
        Some(n) => n,
        None => return (false, vec![UNRESOLVED_TARGET_RULE.to_string()]),
    };
    let mut matched = Vec::new();
    let mut any_allow = false;
    let mut any_deny = false;
    for rule in &policies.rules {
        if oracle_rule_matches(rule, intent.action_type, node, state) {
            matched.push(rule.rule_id.clone());
            match rule.effect {
                PolicyEffect::Allow => any_allow = true,
                PolicyEffect::Deny => any_deny = true,
            }
        }
    }
    (any_allow && !any_deny, matched)
}

fn pick(rng: &mut ChaCha20Rng, n: usize) -> usize {
    (rng.next_u64() % n as u64) as usize
}

fn random_rule(rng: &mut ChaCha20Rng, id: usize) -> PolicyRule {
    const ACTION_PATTERNS: [&str; 9] = [
        "*", "TERMINATE_NODE", "RESTART_NODE", "SCALE_GROUP", "MODIFY_ROUTE",
        "GRANT_ROLE", "TERMINATE_*", "*_NODE", "MODIFY_*",
    ];
    const TAGS: [&str; 7] = [
        "env=production", "env=staging", "criticality=critical", "criticality=normal",
        "geo=eu", "geo=us", "geo=ap",
    ];
    let mut rule = if rng.next_u64().is_multiple_of(2) {
        PolicyRule::allow(&format!("r{id}"), ACTION_PATTERNS[pick(rng, 9)])
    } else {
        PolicyRule::deny(&format!("r{id}"), ACTION_PATTERNS[pick(rng, 9)])
    };
    if rng.next_u64().is_multiple_of(2) {
        let k = 1 + pick(rng, 3);
        let classes: Vec<_> = (0..k).map(|_| ALL_CLASSES[pick(rng, 4)]).collect();
        rule = rule.classes(&classes);
    }
    if rng.next_u64().is_multiple_of(3) {
        let k = 1 + pick(rng, 4);
        let regions: Vec<_> = (0..k).map(|_| ALL_REGIONS[pick(rng, 6)]).collect();
        rule = rule.regions(&regions);
    }
    if rng.next_u64().is_multiple_of(3) {
        let statuses = match pick(rng, 3) {
            0 => vec![NodeStatus::Running],
            1 => vec![NodeStatus::Running, NodeStatus::Stopped],
            _ => vec![NodeStatus::Terminated],
        };
        rule = rule.statuses(&statuses);
    }
    if rng.next_u64().is_multiple_of(3) {
        let k = 1 + pick(rng, 2);
        let tags: Vec<&str> = (0..k).map(|_| TAGS[pick(rng, 7)]).collect();
        rule = rule.tags_all(&tags);
    }
    if rng.next_u64().is_multiple_of(4) {
        let tags: Vec<&str> = vec![TAGS[pick(rng, 7)]];
        rule = rule.tags_none(&tags);
    }
    if rng.next_u64().is_multiple_of(4) {
        let k = 1 + pick(rng, 5);
        let regions: Vec<_> = (0..k).map(|_| ALL_REGIONS[pick(rng, 6)]).collect();
        rule = rule.restrict_regions(&regions);
    }
    if rng.next_u64().is_multiple_of(4) {
        rule = rule.blast_radius(
            ALL_CLASSES[pick(rng, 4)],
            rng.next_u64() % 1_000_001,
        );
    }
    rule
}

#[test]
fn criterion_7_oracle_equivalence() {
    let mut rng = ChaCha20Rng::seed_from_u64(9001);
    let mut disagreements = 0u32;
    for instance in 0..10_000u64 {
        let node_count = 1 + (rng.next_u64() % 8);
        let mut state =
            generate_state(rng.next_u64(), node_count, rng.next_u64() % 300_000).unwrap();
        // Terminate a random subset so status and blast predicates vary.
        let ids: Vec<_> = state.nodes.keys().cloned().collect();
        for id in &ids {
            if rng.next_u64() % 4 == 0 {
                state.nodes.get_mut(id).unwrap().status = NodeStatus::Terminated;
            }
        }
        let (_, cache) = project(&state, rng.next_u64());

        let rule_count = 1 + pick(&mut rng, 8);
        let rules: Vec<PolicyRule> =
            (0..rule_count).map(|i| random_rule(&mut rng, i)).collect();
        let policies = PolicySet::from_rules(rules).unwrap();

        let action = ALL_ACTIONS[pick(&mut rng, 5)];
        let target_token = if rng.next_u64() % 5 == 0 {
            Token("Node-QQQQQ2".to_string())
        } else {
            let idx = pick(&mut rng, ids.len());
            cache.token_for(&ids[idx]).unwrap().clone()
        };
        let parameters = match action {
            ActionType::ScaleGroup => {
                [("replicas".to_string(), ParamValue::Int(3))].into()
            }
            ActionType::GrantRole => {
                [("role".to_string(), ParamValue::Str("log-reader".to_string()))].into()
            }
            ActionType::ModifyRoute => [
                ("peer_token".to_string(), ParamValue::Str(target_token.0.clone())),
                ("route_op".to_string(), ParamValue::Str("add".to_string())),
            ]
            .into(),
            _ => Default::default(),
        };
        let intent = Intent {
            action_type: action,
            justification: Justification {
                claims: vec![],
                text: String::new(),
            },
            parameters,
            target_token,
        };

        let engine_result = evaluate_policy(&intent, &state, &cache, &policies);
        let oracle_result = oracle_evaluate(&intent, &state, &cache, &policies);
        if engine_result != oracle_result {
            disagreements += 1;
            eprintln!(
                "instance {instance}: engine {engine_result:?} vs oracle {oracle_result:?}"
            );
        }
    }
    assert_eq!(disagreements, 0);
    pass("C7 oracle-equivalence (10000 randomized instances, zero disagreements)");
}

#[test]
fn criterion_8_deterministic_benchmarks() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let (_, second_bytes, _) = run_cli_bench(dir.path(), SCALED_TOTAL);

    let norm_first = normalize_ledger_bytes(&f.ledger_bytes).unwrap();
    let norm_second = normalize_ledger_bytes(&second_bytes).unwrap();
    assert_eq!(
        norm_first, norm_second,
        "two cmd_bench runs with identical seed/policy must normalize to identical bytes"
    );

    // The in-process run of the same scenario lands on the same bytes too.
    let library_bytes = library_outcome().ledger.to_jsonl_bytes();
    assert_eq!(norm_first, normalize_ledger_bytes(&library_bytes).unwrap());

    pass("C8 determinism (normalized ledgers byte-identical across runs)");
}
