//! Request and response bodies for the control-plane HTTP API.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use sal_core::evaluator::{Decision, FailedClaim};
use sal_core::harness::{BenchReport, ScenarioSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionCreateRequest {
    pub edge_density_ppm: u64,
    pub node_count: u64,
    /// Policy document: `{"format":"sal-policy","rules":[...],"version":1}`.
    pub policy: Value,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionCreateResponse {
    pub epoch: u64,
    pub node_count: u64,
    pub policy_hash: String,
    pub session_id: String,
}

/// Agent-facing mediation result. Carries the verdict attribution but never
/// de-obfuscated identity (executed actions are ledger-only).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediationResponse {
    pub decision: Decision,
    pub failed_claims: Vec<FailedClaim>,
    pub matched_rule_ids: Vec<String>,
    pub policy_hash: String,
    pub record_hash: String,
    pub step_index: u64,
}

/// Live session counters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionStats {
    pub approved: u64,
    pub denied_consistency: u64,
    pub denied_error: u64,
    pub denied_policy: u64,
    pub executed: u64,
    pub total_records: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRequest {
    pub policy: Value,
    pub spec: ScenarioSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchResponse {
    pub report: BenchReport,
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayRequest {
    /// Full ledger JSONL content.
    pub ledger: String,
    pub policy: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiErrorBody {
    pub error: String,
    pub kind: String,
}
