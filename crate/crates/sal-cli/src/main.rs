//! `sal`: operator command line for the SAL control plane.
//!
//! Local subcommands generate fixtures, run the seeded benchmark, and perform
//! ledger forensics on files. `serve` mounts the HTTP control plane, and the
//! `session` group (plus `bench --server`) drives a running service through
//! the client crate.
//!
//! Exit codes: 0 success; 1 usage or I/O; 2 input parse/validation failure;
//! 3 ledger integrity failure; 4 replay mismatch; 5 policy-hash mismatch on
//! replay; 6 benchmark safety gate failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use sal_client::api::{BenchRequest, ReplayRequest, SessionCreateRequest};
use sal_client::SalClient;
use sal_core::canonical;
use sal_core::chain::{
    normalize_ledger_bytes, replay_ledger_bytes, verify_ledger_bytes, write_atomic, ReplayReport,
};
use sal_core::evaluator::PolicySet;
use sal_core::harness::{
    benchmark_policy_set, modes_to_jsonl, render_report, run_loop, BenchReport, ScenarioSpec,
    DEFAULT_EDGE_DENSITY_PPM, DEFAULT_GOAL_LABEL, DEFAULT_NODE_COUNT,
};
use sal_core::intent::{parse_intent, workload_to_jsonl};
use sal_core::state::generate_state;

const EXIT_OK: u8 = 0;
const EXIT_USAGE_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INTEGRITY: u8 = 3;
const EXIT_REPLAY_MISMATCH: u8 = 4;
const EXIT_POLICY_HASH: u8 = 5;
const EXIT_SAFETY_GATE: u8 = 6;

#[derive(Parser)]
#[command(
    name = "sal",
    version,
    about = "Deterministic control plane for mediated agentic execution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StateGenArgs {
    /// Master seed; may also come from SAL_SEED.
    #[arg(long, env = "SAL_SEED", default_value_t = 42)]
    seed: u64,
    /// Number of simulated nodes.
    #[arg(long, default_value_t = DEFAULT_NODE_COUNT)]
    nodes: u64,
    /// Dependency edge density as a fraction in [0, 1].
    #[arg(long, default_value_t = DEFAULT_EDGE_DENSITY_PPM as f64 / 1e6)]
    edge_density: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP control plane.
    Serve {
        #[arg(long, default_value = "127.0.0.1:9150")]
        addr: String,
    },
    /// Write a canonical state fixture fully determined by the seed.
    GenState {
        #[command(flatten)]
        gen: StateGenArgs,
        /// Output path for the canonical state document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the benchmark policy set as a canonical policy document.
    GenPolicy {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the seeded benchmark and write the evidence ledger, report, and
    /// workload sidecar.
    Bench {
        #[command(flatten)]
        gen: StateGenArgs,
        /// Total intents in the workload.
        #[arg(long, default_value_t = 1000)]
        intents: u64,
        /// Explicit workload split (all three required together).
        #[arg(long, requires_all = ["adv_policy", "adv_consistency"])]
        benign: Option<u64>,
        #[arg(long, requires_all = ["benign", "adv_consistency"])]
        adv_policy: Option<u64>,
        #[arg(long, requires_all = ["benign", "adv_policy"])]
        adv_consistency: Option<u64>,
        /// Goal label handed to the agent.
        #[arg(long, default_value = DEFAULT_GOAL_LABEL)]
        goal: String,
        /// Policy document path.
        #[arg(long)]
        policy: PathBuf,
        /// Evidence ledger output path.
        #[arg(long)]
        ledger: PathBuf,
        /// Benchmark report output path.
        #[arg(long)]
        report: PathBuf,
        /// Workload-mode sidecar output path (defaults to <ledger>.modes.jsonl).
        #[arg(long)]
        modes_out: Option<PathBuf>,
        /// Optionally dump the generated intents as a workload file.
        #[arg(long)]
        workload_out: Option<PathBuf>,
        /// Overwrite existing output files.
        #[arg(long)]
        force: bool,
        /// Run the benchmark on a remote control plane instead of locally.
        #[arg(long)]
        server: Option<String>,
    },
    /// Verify a ledger's hash chain and canonical encoding.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
        /// Verify via a running service instead of locally.
        #[arg(long)]
        server: Option<String>,
        /// Emit the verification report as JSON instead of prose.
        #[arg(long)]
        json: bool,
    },
    /// Re-derive every recorded decision and compare against the ledger.
    Replay {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        server: Option<String>,
        /// Emit the replay report as JSON instead of prose.
        #[arg(long)]
        json: bool,
    },
    /// Pretty-print one ledger record with its verification status.
    Inspect {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        index: u64,
    },
    /// Write the replay-normalization view (latency trailers zeroed).
    Normalize {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Drive a running control plane as a client.
    Session {
        #[command(subcommand)]
        command: SessionCommand,
    },
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Create a live mediation session.
    New {
        #[arg(long)]
        server: String,
        #[command(flatten)]
        gen: StateGenArgs,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Fetch the agent-facing obfuscated view.
    View {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
    },
    /// Submit one intent file (raw bytes) for mediation.
    Submit {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
        /// Path to the intent JSON; "-" reads stdin.
        #[arg(long)]
        intent: String,
    },
    /// Download the session ledger.
    Ledger {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the session ledger server-side.
    Verify {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
    },
    /// Replay the session ledger server-side.
    Replay {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
    },
    /// Live decision counters.
    Stats {
        #[arg(long)]
        server: String,
        #[arg(long)]
        id: String,
    },
}

fn density_ppm(edge_density: f64) -> anyhow::Result<u64> {
    if !(0.0..=1.0).contains(&edge_density) || !edge_density.is_finite() {
        return Err(anyhow!("--edge-density must be a fraction in [0, 1]"));
    }
    Ok((edge_density * 1_000_000.0).round() as u64)
}

fn load_policy(path: &Path, announce: bool) -> Result<PolicySet, u8> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read policy file {}: {e}", path.display());
            return Err(EXIT_USAGE_IO);
        }
    };
    match PolicySet::from_document_bytes(&bytes) {
        Ok(set) => {
            if announce {
                println!("policy_hash: {}", set.policy_hash);
            }
            Ok(set)
        }
        Err(e) => {
            eprintln!("error: policy file rejected: {e}");
            Err(EXIT_PARSE)
        }
    }
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<(), u8> {
    if path.exists() && !force {
        eprintln!(
            "error: {} exists; pass --force to overwrite",
            path.display()
        );
        return Err(EXIT_USAGE_IO);
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), u8> {
    match write_atomic(path, bytes) {
        Ok(()) => Ok(()),
        Err(e) => {
            eprintln!("error: cannot write {}: {e}", path.display());
            Err(EXIT_USAGE_IO)
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, u8> {
    std::fs::read(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_USAGE_IO
    })
}

fn block_on<F: std::future::Future>(future: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
        .block_on(future)
}

fn client_call<T, F>(future: F) -> Result<T, u8>
where
    F: std::future::Future<Output = Result<T, sal_client::ClientError>>,
{
    block_on(future).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_USAGE_IO
    })
}

fn cmd_gen_state(gen: StateGenArgs, out: PathBuf) -> u8 {
    let ppm = match density_ppm(gen.edge_density) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_PARSE;
        }
    };
    let state = match generate_state(gen.seed, gen.nodes, ppm) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: state generation rejected: {e}");
            return EXIT_PARSE;
        }
    };
    let bytes = state.to_canonical_bytes();
    if let Err(code) = write_file(&out, &bytes) {
        return code;
    }
    println!(
        "wrote {} ({} nodes, {} edges, sha256 {})",
        out.display(),
        state.nodes.len(),
        state.edges.len(),
        canonical::sha256_hex(&bytes)
    );
    EXIT_OK
}

fn cmd_gen_policy(out: PathBuf) -> u8 {
    let set = benchmark_policy_set();
    if let Err(code) = write_file(&out, &set.to_document_bytes()) {
        return code;
    }
    println!(
        "wrote {} ({} rules, policy_hash {})",
        out.display(),
        set.rules.len(),
        set.policy_hash
    );
    EXIT_OK
}

struct BenchOutputs {
    ledger: PathBuf,
    modes: PathBuf,
    report: PathBuf,
    workload: Option<PathBuf>,
}

fn bench_gate(report: &BenchReport, replay_clean: bool) -> u8 {
    if report.blocking_rate_ppm != 1_000_000 {
        eprintln!(
            "safety gate failed: blocking_rate {}/1000000",
            report.blocking_rate_ppm
        );
        return EXIT_SAFETY_GATE;
    }
    if report.replay_matched != report.total_intents || !replay_clean {
        eprintln!(
            "safety gate failed: replay matched {}/{}",
            report.replay_matched, report.total_intents
        );
        return EXIT_SAFETY_GATE;
    }
    EXIT_OK
}

fn workload_bytes_from_ledger(ledger_bytes: &[u8]) -> anyhow::Result<Vec<u8>> {
    let (_, records) = sal_core::chain::parse_ledger_bytes(ledger_bytes)
        .map_err(|e| anyhow!("ledger unreadable: {e}"))?;
    let intents = records
        .iter()
        .map(|r| parse_intent(r.intent_canonical.as_bytes()))
        .collect::<Result<Vec<_>, _>>()
        .context("ledger contains an unparseable intent")?;
    Ok(workload_to_jsonl(&intents))
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    spec: ScenarioSpec,
    policy_path: PathBuf,
    outputs: BenchOutputs,
    force: bool,
    server: Option<String>,
) -> u8 {
    let policies = match load_policy(&policy_path, true) {
        Ok(p) => p,
        Err(code) => return code,
    };
    for path in [&outputs.ledger, &outputs.modes, &outputs.report] {
        if let Err(code) = refuse_overwrite(path, force) {
            return code;
        }
    }
    if let Some(w) = &outputs.workload {
        if let Err(code) = refuse_overwrite(w, force) {
            return code;
        }
    }

    let (ledger_bytes, modes_bytes, report) = if let Some(server) = server {
        let client = SalClient::new(&server);
        let policy_value: serde_json::Value =
            serde_json::from_slice(&policies.to_document_bytes()).expect("canonical policy");
        let response = match client_call(client.bench(&BenchRequest {
            policy: policy_value,
            spec: spec.clone(),
        })) {
            Ok(r) => r,
            Err(code) => return code,
        };
        let ledger = match client_call(client.ledger_bytes(&response.session_id)) {
            Ok(b) => b,
            Err(code) => return code,
        };
        let modes = match client_call(client.modes_bytes(&response.session_id)) {
            Ok(b) => b,
            Err(code) => return code,
        };
        (ledger, modes, response.report)
    } else {
        let outcome = match run_loop(&spec, &policies) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: benchmark failed: {e}");
                return EXIT_PARSE;
            }
        };
        if outcome.scrub_leak_total > 0 {
            eprintln!(
                "safety gate failed: {} identity leaks in emitted views",
                outcome.scrub_leak_total
            );
            return EXIT_SAFETY_GATE;
        }
        (
            outcome.ledger.to_jsonl_bytes(),
            modes_to_jsonl(&outcome.modes),
            outcome.report,
        )
    };

    // Pre-write replay check against the exact bytes we persist.
    let replay_clean = matches!(
        replay_ledger_bytes(&ledger_bytes, &policies),
        Ok(ReplayReport { ref flagged, ref mismatched, .. })
            if flagged.is_empty() && mismatched.is_empty()
    );

    if let Err(code) = write_file(&outputs.ledger, &ledger_bytes) {
        return code;
    }
    if let Err(code) = write_file(&outputs.modes, &modes_bytes) {
        return code;
    }
    if let Err(code) = write_file(&outputs.report, &report.to_canonical_bytes()) {
        return code;
    }
    if let Some(workload_path) = &outputs.workload {
        match workload_bytes_from_ledger(&ledger_bytes) {
            Ok(bytes) => {
                if let Err(code) = write_file(workload_path, &bytes) {
                    return code;
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_PARSE;
            }
        }
    }

    print!("{}", render_report(&report));
    println!("ledger: {}", outputs.ledger.display());
    println!("report: {}", outputs.report.display());
    bench_gate(&report, replay_clean)
}

fn cmd_verify(ledger: PathBuf, server: Option<String>, json: bool) -> u8 {
    let bytes = match read_file(&ledger) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let report = if let Some(server) = server {
        match client_call(SalClient::new(&server).verify_ledger(bytes)) {
            Ok(r) => r,
            Err(code) => return code,
        }
    } else {
        verify_ledger_bytes(&bytes)
    };
    if json {
        println!(
            "{}",
            String::from_utf8(canonical::to_canonical_bytes(&report)).expect("utf8")
        );
        return if report.ok { EXIT_OK } else { EXIT_INTEGRITY };
    }
    if report.ok {
        println!("ok");
        EXIT_OK
    } else {
        println!(
            "integrity violation at record {}",
            report.first_bad_index.unwrap_or(0)
        );
        EXIT_INTEGRITY
    }
}

fn replay_exit_code(report: &ReplayReport) -> u8 {
    if !report.flagged.is_empty() {
        EXIT_POLICY_HASH
    } else if !report.mismatched.is_empty() {
        EXIT_REPLAY_MISMATCH
    } else {
        EXIT_OK
    }
}

fn replay_exit(report: &ReplayReport, total: u64) -> u8 {
    if !report.flagged.is_empty() {
        println!(
            "policy hash mismatch: {} of {total} records flagged, {} matched",
            report.flagged.len(),
            report.matched
        );
        return EXIT_POLICY_HASH;
    }
    if !report.mismatched.is_empty() {
        let shown: Vec<String> = report
            .mismatched
            .iter()
            .take(10)
            .map(u64::to_string)
            .collect();
        println!(
            "replay mismatches at records [{}]{}; matched {}/{total}",
            shown.join(", "),
            if report.mismatched.len() > 10 { ", ..." } else { "" },
            report.matched
        );
        return EXIT_REPLAY_MISMATCH;
    }
    println!("matched {}/{total}", report.matched);
    EXIT_OK
}

fn cmd_replay(ledger: PathBuf, policy: PathBuf, server: Option<String>, json: bool) -> u8 {
    let bytes = match read_file(&ledger) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let policies = match load_policy(&policy, !json) {
        Ok(p) => p,
        Err(code) => return code,
    };
    let total = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count() as u64;
    let total = total.saturating_sub(1);

    let report = if let Some(server) = server {
        let request = ReplayRequest {
            ledger: String::from_utf8_lossy(&bytes).into_owned(),
            policy: serde_json::from_slice(&policies.to_document_bytes())
                .expect("canonical policy"),
        };
        match client_call(SalClient::new(&server).replay_ledger(&request)) {
            Ok(r) => Ok(r),
            Err(code) => return code,
        }
    } else {
        replay_ledger_bytes(&bytes, &policies)
    };
    match report {
        Ok(report) => {
            if json {
                println!(
                    "{}",
                    String::from_utf8(canonical::to_canonical_bytes(&report)).expect("utf8")
                );
                return replay_exit_code(&report);
            }
            replay_exit(&report, total)
        }
        Err(e) => {
            println!("ledger failed verification: {e}");
            EXIT_INTEGRITY
        }
    }
}

fn cmd_inspect(ledger: PathBuf, index: u64) -> u8 {
    let bytes = match read_file(&ledger) {
        Ok(b) => b,
        Err(code) => return code,
    };
    let verification = verify_ledger_bytes(&bytes);
    let lines: Vec<&[u8]> = bytes
        .split(|b| *b == b'\n')
        .filter(|l| !l.is_empty())
        .collect();
    if lines.len() < 2 {
        eprintln!("error: ledger has no records");
        return EXIT_USAGE_IO;
    }
    let record_count = (lines.len() - 1) as u64;
    if index >= record_count {
        eprintln!("error: index {index} out of range (ledger has {record_count} records)");
        return EXIT_USAGE_IO;
    }
    let line = lines[(index + 1) as usize];
    let status = if verification.ok || verification.first_bad_index.unwrap_or(0) > index {
        "VERIFIED"
    } else {
        "TAMPERED"
    };
    match serde_json::from_slice::<serde_json::Value>(line) {
        Ok(value) => {
            println!("record {index}: {status}");
            println!("{}", serde_json::to_string_pretty(&value).expect("pretty"));
        }
        Err(_) => {
            println!("record {index}: {status}");
            println!("{}", String::from_utf8_lossy(line));
        }
    }
    if status == "VERIFIED" {
        EXIT_OK
    } else {
        EXIT_INTEGRITY
    }
}

fn cmd_normalize(ledger: PathBuf, out: PathBuf, force: bool) -> u8 {
    let bytes = match read_file(&ledger) {
        Ok(b) => b,
        Err(code) => return code,
    };
    if let Err(code) = refuse_overwrite(&out, force) {
        return code;
    }
    match normalize_ledger_bytes(&bytes) {
        Ok(normalized) => {
            if let Err(code) = write_file(&out, &normalized) {
                return code;
            }
            println!("wrote {}", out.display());
            EXIT_OK
        }
        Err(e) => {
            println!("ledger failed verification: {e}");
            EXIT_INTEGRITY
        }
    }
}

fn cmd_session(command: SessionCommand) -> u8 {
    match command {
        SessionCommand::New {
            server,
            gen,
            policy,
        } => {
            let policies = match load_policy(&policy, true) {
                Ok(p) => p,
                Err(code) => return code,
            };
            let ppm = match density_ppm(gen.edge_density) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_PARSE;
                }
            };
            let request = SessionCreateRequest {
                edge_density_ppm: ppm,
                node_count: gen.nodes,
                policy: serde_json::from_slice(&policies.to_document_bytes())
                    .expect("canonical policy"),
                seed: gen.seed,
            };
            match client_call(SalClient::new(&server).create_session(&request)) {
                Ok(response) => {
                    println!("session_id: {}", response.session_id);
                    println!("nodes: {}", response.node_count);
                    EXIT_OK
                }
                Err(code) => code,
            }
        }
        SessionCommand::View { server, id } => {
            match client_call(SalClient::new(&server).view_bytes(&id)) {
                Ok(bytes) => {
                    println!("{}", String::from_utf8_lossy(&bytes));
                    EXIT_OK
                }
                Err(code) => code,
            }
        }
        SessionCommand::Submit { server, id, intent } => {
            let raw = if intent == "-" {
                use std::io::Read;
                let mut buf = Vec::new();
                if std::io::stdin().read_to_end(&mut buf).is_err() {
                    eprintln!("error: cannot read stdin");
                    return EXIT_USAGE_IO;
                }
                buf
            } else {
                match read_file(Path::new(&intent)) {
                    Ok(b) => b,
                    Err(code) => return code,
                }
            };
            match client_call(SalClient::new(&server).submit_intent(&id, raw)) {
                Ok(response) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&response).expect("serializable")
                    );
                    EXIT_OK
                }
                Err(code) => code,
            }
        }
        SessionCommand::Ledger { server, id, out } => {
            match client_call(SalClient::new(&server).ledger_bytes(&id)) {
                Ok(bytes) => match out {
                    Some(path) => match write_file(&path, &bytes) {
                        Ok(()) => {
                            println!("wrote {}", path.display());
                            EXIT_OK
                        }
                        Err(code) => code,
                    },
                    None => {
                        print!("{}", String::from_utf8_lossy(&bytes));
                        EXIT_OK
                    }
                },
                Err(code) => code,
            }
        }
        SessionCommand::Verify { server, id } => {
            match client_call(SalClient::new(&server).verify_session(&id)) {
                Ok(report) if report.ok => {
                    println!("ok");
                    EXIT_OK
                }
                Ok(report) => {
                    println!(
                        "integrity violation at record {}",
                        report.first_bad_index.unwrap_or(0)
                    );
                    EXIT_INTEGRITY
                }
                Err(code) => code,
            }
        }
        SessionCommand::Replay { server, id } => {
            match client_call(SalClient::new(&server).replay_session(&id)) {
                Ok(report) => {
                    let total = report.matched
                        + report.mismatched.len() as u64
                        + report.flagged.len() as u64;
                    replay_exit(&report, total)
                }
                Err(code) => code,
            }
        }
        SessionCommand::Stats { server, id } => {
            match client_call(SalClient::new(&server).stats(&id)) {
                Ok(stats) => {
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&stats).expect("serializable")
                    );
                    EXIT_OK
                }
                Err(code) => code,
            }
        }
    }
}

fn run(cli: Cli) -> u8 {
    match cli.command {
        Command::Serve { addr } => {
            tracing_subscriber::fmt()
                .with_env_filter(
                    tracing_subscriber::EnvFilter::try_from_default_env()
                        .unwrap_or_else(|_| "info".into()),
                )
                .init();
            block_on(async move {
                let listener = match tokio::net::TcpListener::bind(&addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        eprintln!("error: cannot bind {addr}: {e}");
                        return EXIT_USAGE_IO;
                    }
                };
                match sal_service::serve(listener).await {
                    Ok(()) => EXIT_OK,
                    Err(e) => {
                        eprintln!("error: server failed: {e}");
                        EXIT_USAGE_IO
                    }
                }
            })
        }
        Command::GenState { gen, out } => cmd_gen_state(gen, out),
        Command::GenPolicy { out } => cmd_gen_policy(out),
        Command::Bench {
            gen,
            intents,
            benign,
            adv_policy,
            adv_consistency,
            goal,
            policy,
            ledger,
            report,
            modes_out,
            workload_out,
            force,
            server,
        } => {
            let ppm = match density_ppm(gen.edge_density) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_PARSE;
                }
            };
            let mut spec = ScenarioSpec::scaled(gen.seed, intents);
            spec.edge_density_ppm = ppm;
            spec.goal_label = goal;
            spec.node_count = gen.nodes;
            if let (Some(b), Some(p), Some(c)) = (benign, adv_policy, adv_consistency) {
                spec.benign_count = b;
                spec.adversarial_policy_count = p;
                spec.adversarial_consistency_count = c;
            }
            if let Err(e) = spec.validate() {
                eprintln!("error: {e}");
                return EXIT_PARSE;
            }
            let modes = modes_out.unwrap_or_else(|| {
                let mut name = ledger.as_os_str().to_os_string();
                name.push(".modes.jsonl");
                PathBuf::from(name)
            });
            cmd_bench(
                spec,
                policy,
                BenchOutputs {
                    ledger,
                    modes,
                    report,
                    workload: workload_out,
                },
                force,
                server,
            )
        }
        Command::Verify {
            ledger,
            server,
            json,
        } => cmd_verify(ledger, server, json),
        Command::Replay {
            ledger,
            policy,
            server,
            json,
        } => cmd_replay(ledger, policy, server, json),
        Command::Inspect { ledger, index } => cmd_inspect(ledger, index),
        Command::Normalize { ledger, out, force } => cmd_normalize(ledger, out, force),
        Command::Session { command } => cmd_session(command),
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_fraction_to_ppm() {
        assert_eq!(density_ppm(0.0).unwrap(), 0);
        assert_eq!(density_ppm(0.05).unwrap(), 50_000);
        assert_eq!(density_ppm(1.0).unwrap(), 1_000_000);
        assert!(density_ppm(1.5).is_err());
        assert!(density_ppm(-0.1).is_err());
    }

    #[test]
    fn cli_parses_reference_invocations() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::parse_from([
            "sal", "bench", "--seed", "42", "--nodes", "100", "--intents", "1000",
            "--policy", "p.json", "--ledger", "l.jsonl", "--report", "r.json",
        ]);
        assert!(matches!(cli.command, Command::Bench { .. }));
    }
}
