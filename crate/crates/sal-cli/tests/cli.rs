//! Exit-code discipline and file behavior of the `sal` binary.

use std::path::Path;
use std::process::{Command, Output};

fn sal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(args)
        .current_dir(dir)
        .env_remove("SAL_SEED")
        .output()
        .expect("sal runs")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

fn setup_policy(dir: &Path) {
    let out = sal(&["gen-policy", "--out", "policy.json"], dir);
    assert_eq!(code(&out), 0);
}

fn run_small_bench(dir: &Path) {
    setup_policy(dir);
    let out = sal(
        &[
            "bench", "--seed", "42", "--nodes", "50", "--intents", "120",
            "--policy", "policy.json", "--ledger", "ledger.jsonl", "--report", "report.json",
        ],
        dir,
    );
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_state_is_reproducible_and_validates_input() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "gen-state", "--seed", "42", "--nodes", "100", "--edge-density", "0.05",
        "--out", "state.json",
    ];
    assert_eq!(code(&sal(&args, dir.path())), 0);
    let first = std::fs::read(dir.path().join("state.json")).unwrap();
    assert_eq!(code(&sal(&args, dir.path())), 0);
    let second = std::fs::read(dir.path().join("state.json")).unwrap();
    assert_eq!(first, second, "same command must be byte-identical");

    let out = sal(
        &["gen-state", "--seed", "42", "--nodes", "0", "--out", "zero.json"],
        dir.path(),
    );
    assert_ne!(code(&out), 0);
    assert!(!dir.path().join("zero.json").exists());
}

#[test]
fn bench_gates_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_small_bench(dir.path());
    assert!(dir.path().join("ledger.jsonl").exists());
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("ledger.jsonl.modes.jsonl").exists());

    // Refuses to clobber an existing ledger without --force.
    let out = sal(
        &[
            "bench", "--seed", "42", "--nodes", "50", "--intents", "120",
            "--policy", "policy.json", "--ledger", "ledger.jsonl", "--report", "report.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);

    let out = sal(
        &[
            "bench", "--seed", "42", "--nodes", "50", "--intents", "120",
            "--policy", "policy.json", "--ledger", "ledger.jsonl", "--report", "report.json",
            "--force", "--workload-out", "workload.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let workload = std::fs::read(dir.path().join("workload.jsonl")).unwrap();
    let intents = sal_core::intent::workload_from_jsonl(&workload).unwrap();
    assert_eq!(intents.len(), 120);
}

#[test]
fn bench_requires_a_readable_valid_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = sal(
        &[
            "bench", "--seed", "1", "--intents", "10", "--policy", "missing.json",
            "--ledger", "l.jsonl", "--report", "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
    assert!(!dir.path().join("l.jsonl").exists());

    std::fs::write(dir.path().join("corrupt.json"), b"{not json").unwrap();
    let out = sal(
        &[
            "bench", "--seed", "1", "--intents", "10", "--policy", "corrupt.json",
            "--ledger", "l.jsonl", "--report", "r.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("l.jsonl").exists(), "nothing may execute");
}

#[test]
fn verify_and_replay_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    run_small_bench(dir.path());

    let out = sal(&["verify", "--ledger", "ledger.jsonl"], dir.path());
    assert_eq!(code(&out), 0);

    let out = sal(
        &["replay", "--ledger", "ledger.jsonl", "--policy", "policy.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("matched 120/120"));

    // Missing ledger file.
    let out = sal(&["verify", "--ledger", "nope.jsonl"], dir.path());
    assert_eq!(code(&out), 1);

    // Single tampered byte: detected with the record index reported.
    let mut bytes = std::fs::read(dir.path().join("ledger.jsonl")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    std::fs::write(dir.path().join("tampered.jsonl"), &bytes).unwrap();
    let out = sal(&["verify", "--ledger", "tampered.jsonl"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("integrity violation at record"));

    let out = sal(
        &["replay", "--ledger", "tampered.jsonl", "--policy", "policy.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 3);

    // Replay under a different policy set: distinct policy-hash exit code.
    let other = sal_core::evaluator::PolicySet::from_rules(vec![
        sal_core::evaluator::PolicyRule::deny("deny-everything", "*"),
    ])
    .unwrap();
    std::fs::write(dir.path().join("other.json"), other.to_document_bytes()).unwrap();
    let out = sal(
        &["replay", "--ledger", "ledger.jsonl", "--policy", "other.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 5);

    // A forged verdict with a fully recomputed chain verifies but fails
    // replay with its own exit code.
    let bytes = std::fs::read(dir.path().join("ledger.jsonl")).unwrap();
    let (header, mut records) = sal_core::chain::parse_ledger_bytes(&bytes).unwrap();
    let forged_at = records
        .iter()
        .position(|r| r.verdict.decision == sal_core::evaluator::Decision::Approved)
        .unwrap();
    records[forged_at].verdict.decision = sal_core::evaluator::Decision::DeniedPolicy;
    records[forged_at].executed_action = sal_core::chain::ExecutedField::Withheld;
    let mut rebuilt = sal_core::chain::Ledger::new(header.policy_hash.clone());
    for record in &records {
        rebuilt
            .append(sal_core::chain::RecordDraft {
                context_hash: None,
                context_snapshot: record.context_snapshot.clone(),
                executed_action: record.executed_action.clone(),
                intent_canonical: record.intent_canonical.clone(),
                stage_latencies_ns: record.stage_latencies_ns,
                verdict: record.verdict.clone(),
            })
            .unwrap();
    }
    std::fs::write(dir.path().join("forged.jsonl"), rebuilt.to_jsonl_bytes()).unwrap();
    let out = sal(&["verify", "--ledger", "forged.jsonl"], dir.path());
    assert_eq!(code(&out), 0, "forgery with recomputed hashes verifies");
    let out = sal(
        &["replay", "--ledger", "forged.jsonl", "--policy", "policy.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stdout).contains(&forged_at.to_string()));

    // Machine output flags.
    let out = sal(&["verify", "--ledger", "ledger.jsonl", "--json"], dir.path());
    assert_eq!(code(&out), 0);
    let report: sal_core::chain::VerificationReport =
        serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.ok);
    let out = sal(
        &["replay", "--ledger", "ledger.jsonl", "--policy", "policy.json", "--json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
}

#[test]
fn inspect_shows_records_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run_small_bench(dir.path());

    let out = sal(&["inspect", "--ledger", "ledger.jsonl", "--index", "0"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("record 0: VERIFIED"));
    assert!(text.contains(&sal_core::chain::genesis_hash()));

    let out = sal(
        &["inspect", "--ledger", "ledger.jsonl", "--index", "999"],
        dir.path(),
    );
    assert_eq!(code(&out), 1);

    let mut bytes = std::fs::read(dir.path().join("ledger.jsonl")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x20;
    std::fs::write(dir.path().join("tampered.jsonl"), &bytes).unwrap();
    let bad_index = {
        let report = sal_core::chain::verify_ledger_bytes(&bytes);
        report.first_bad_index.unwrap()
    };
    let out = sal(
        &[
            "inspect", "--ledger", "tampered.jsonl", "--index", &bad_index.to_string(),
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stdout).contains("TAMPERED"));
}

#[test]
fn normalize_zeroes_latency_trailers() {
    let dir = tempfile::tempdir().unwrap();
    run_small_bench(dir.path());
    let out = sal(
        &["normalize", "--ledger", "ledger.jsonl", "--out", "norm.jsonl"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let normalized = std::fs::read(dir.path().join("norm.jsonl")).unwrap();
    assert!(sal_core::chain::verify_ledger_bytes(&normalized).ok);
    let (_, records) = sal_core::chain::parse_ledger_bytes(&normalized).unwrap();
    assert!(records.iter().all(|r| r.stage_latencies_ns == [0, 0, 0, 0]));
}

#[test]
fn seed_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let explicit = Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(["gen-state", "--seed", "77", "--nodes", "10", "--out", "a.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(explicit.status.code(), Some(0));
    let via_env = Command::new(env!("CARGO_BIN_EXE_sal"))
        .args(["gen-state", "--nodes", "10", "--out", "b.json"])
        .env("SAL_SEED", "77")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(via_env.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("a.json")).unwrap(),
        std::fs::read(dir.path().join("b.json")).unwrap()
    );
}
