//! Core library for the SAL control plane.
//!
//! An untrusted agent proposes structured intents against an obfuscated view
//! of a simulated infrastructure. The control plane resolves tokens back to
//! real resources, evaluates every intent against a declarative policy set and
//! live telemetry, executes approved intents under one-time scoped
//! credentials, and seals every decision into a hash-chained, replayable
//! evidence ledger.
//!
//! Module map:
//!
//! - [`state`]: true infrastructure state, telemetry, context snapshots, and
//!   the deterministic transition function.
//! - [`membrane`]: tokenizing projection to the agent-visible view, the
//!   privileged reverse mapping, and an empirical identity-leakage estimator.
//! - [`intent`]: the intent wire schema and strict parsing.
//! - [`evaluator`]: policy rules, the two-stage evaluation, and verdicts.
//! - [`executor`]: verdict-gated execution with scoped credentials.
//! - [`chain`]: the append-only evidence ledger, integrity verification, and
//!   deterministic replay.
//! - [`control`]: the serialized per-intent mediation pipeline.
//! - [`harness`]: mock agent, workload generation, and the benchmark loop.

pub mod canonical;
pub mod chain;
pub mod control;
pub mod evaluator;
pub mod executor;
pub mod harness;
pub mod intent;
pub mod membrane;
pub mod rng;
pub mod state;
