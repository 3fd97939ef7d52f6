//! The serialized mediation pipeline: one call takes raw agent bytes through
//! parse, de-obfuscation and context fetch, policy evaluation, consistency
//! evaluation, gated execution, and ledger sealing.
//!
//! A [`ControlPlane`] owns the authoritative state, the mapping cache, the
//! executor, and the ledger. `mediate` is `&mut self`, so evaluation and
//! execution of one intent are atomic with respect to state mutation; the
//! snapshot an intent is judged against is always at the epoch it executes
//! against, which closes the check-to-use gap structurally.
//!
//! Stage latency semantics (monotonic clock, nanoseconds):
//! 1. parse + token resolution + context snapshot,
//! 2. policy rule matching,
//! 3. consistency claim checking,
//! 4. context hashing + record serialization + sealing.
//!
//! Execution itself sits between stages 3 and 4 and is not part of the
//! mediation overhead decomposition.

use std::time::Instant;

use thiserror::Error;

use crate::canonical;
use crate::chain::{ChainError, ChainRecord, ExecutedField, Ledger, RecordDraft};
use crate::evaluator::{
    combine_verdict, consistency_over_entries, PolicyEngine, PolicyQuery, PolicySet, Verdict,
};
use crate::executor::{ExecutionOutcome, Executor, ScopedCredential};
use crate::intent::{canonical_intent_bytes, parse_intent};
use crate::membrane::{project, render_view, MappingCache, ObfuscatedState};
use crate::state::{
    neighborhood_entries, ContextSnapshot, SnapshotEntry, StateError, TrueState,
};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Authoritative owner of one mediation session.
pub struct ControlPlane {
    cache: MappingCache,
    engine: PolicyEngine,
    executor: Executor,
    latency_totals_ns: Vec<u64>,
    ledger: Ledger,
    policies: PolicySet,
    state: TrueState,
    view: ObfuscatedState,
}

impl ControlPlane {
    /// Project the membrane over `state`, compile the policy set, and open an
    /// empty ledger. All session randomness (tokens, region aliases,
    /// credentials) derives from `seed`.
    pub fn new(state: TrueState, policies: PolicySet, seed: u64) -> Self {
        let (view, cache) = project(&state, seed);
        let ledger = Ledger::new(policies.policy_hash.clone());
        ControlPlane {
            cache,
            engine: PolicyEngine::compile(&policies),
            executor: Executor::new(seed),
            latency_totals_ns: Vec::new(),
            ledger,
            policies,
            state,
            view,
        }
    }

    /// Current agent-facing view. Refreshed after every executed mutation.
    pub fn view(&self) -> &ObfuscatedState {
        &self.view
    }

    pub fn state(&self) -> &TrueState {
        &self.state
    }

    pub fn cache(&self) -> &MappingCache {
        &self.cache
    }

    pub fn policies(&self) -> &PolicySet {
        &self.policies
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn into_ledger(self) -> Ledger {
        self.ledger
    }

    pub fn audit_credentials(&self) -> &[ScopedCredential] {
        self.executor.audit_credentials()
    }

    /// End-to-end mediation wall time per processed intent, in submission
    /// order. Telemetry only; never part of the hashed chain.
    pub fn latency_totals_ns(&self) -> &[u64] {
        &self.latency_totals_ns
    }

    /// Mediate one raw submission end to end and seal exactly one record.
    ///
    /// Never rejects a submission: malformed input, unknown tokens, policy
    /// violations, contradicted claims, and execution faults all terminate in
    /// a recorded denial. Returns the sealed record and the total mediation
    /// time in nanoseconds.
    pub fn mediate(&mut self, raw: &[u8]) -> Result<(&ChainRecord, u64), ControlError> {
        let t0 = Instant::now();

        // Stage 1: parse, de-obfuscate the target, fetch its neighborhood.
        let parsed = parse_intent(raw);
        let epoch_at_eval = self.state.epoch;
        let mut entries: Vec<SnapshotEntry> = Vec::new();
        let mut target_node = None;
        let intent_canonical = match &parsed {
            Ok(intent) => {
                if self.view.entries.contains_key(&intent.target_token) {
                    if let Some(id) = self.cache.node_id_for(&intent.target_token) {
                        entries = neighborhood_entries(&self.state, &self.cache, id)?;
                        target_node = self.state.nodes.get(id);
                    }
                }
                String::from_utf8(canonical_intent_bytes(intent))
                    .expect("canonical intent bytes are UTF-8")
            }
            Err(_) => String::from_utf8_lossy(raw).into_owned(),
        };
        let stage1 = t0.elapsed().as_nanos() as u64;

        // Stage 2: policy alignment. The input document derives the fleet
        // summary from the full live state.
        let t2 = Instant::now();
        let policy_leg = parsed.as_ref().ok().map(|intent| {
            let query = PolicyQuery::from_live(intent.action_type, target_node, &self.state);
            let (passed, matched) = self.engine.match_rules(&query);
            (passed, matched, query.into_aggregates())
        });
        let stage2 = t2.elapsed().as_nanos() as u64;

        // Stage 3: contextual consistency.
        let t3 = Instant::now();
        let consistency_leg = parsed
            .as_ref()
            .ok()
            .map(|intent| consistency_over_entries(intent, &entries));
        let stage3 = t3.elapsed().as_nanos() as u64;

        let (verdict, aggregates) = match (&parsed, policy_leg, consistency_leg) {
            (
                Ok(_),
                Some((policy_passed, matched, aggregates)),
                Some((consistency_passed, failed)),
            ) => (
                combine_verdict(
                    policy_passed,
                    matched,
                    consistency_passed,
                    failed,
                    canonical::sha256_hex(intent_canonical.as_bytes()),
                    self.policies.policy_hash.clone(),
                ),
                aggregates,
            ),
            _ => (
                Verdict::denied_error(
                    canonical::sha256_hex(intent_canonical.as_bytes()),
                    self.policies.policy_hash.clone(),
                ),
                crate::state::compute_aggregates(&self.state),
            ),
        };

        // Gated execution; the only mutation path.
        let executed_action = if verdict.decision.is_approved() {
            let intent = parsed.as_ref().expect("approved implies parsed");
            let (outcome, next_state) =
                self.executor
                    .execute(intent, &verdict, &self.state, &self.cache);
            match outcome {
                ExecutionOutcome::Executed(action) => {
                    self.state = next_state;
                    self.view = render_view(&self.state, &self.cache);
                    ExecutedField::Executed(action)
                }
                ExecutionOutcome::Withheld(_) => ExecutedField::Withheld,
            }
        } else {
            ExecutedField::Withheld
        };

        // Stage 4: assemble the recorded context (pre-execution epoch), hash
        // it, seal and chain the record. The sealed stage-4 value covers
        // context hashing plus record serialization and hashing; the trailer
        // patch afterwards is constant-time bookkeeping.
        let t4 = Instant::now();
        let snapshot = ContextSnapshot {
            aggregates,
            entries,
            epoch: epoch_at_eval,
        };
        let mut record = self.ledger.seal(RecordDraft {
            context_hash: None,
            context_snapshot: snapshot,
            executed_action,
            intent_canonical,
            stage_latencies_ns: [stage1, stage2, stage3, 0],
            verdict,
        })?;
        let stage4 = t4.elapsed().as_nanos() as u64;
        record.set_stage_latencies([stage1, stage2, stage3, stage4.max(1)]);
        let record = self.ledger.push_sealed(record)?;

        self.latency_totals_ns.push(t0.elapsed().as_nanos() as u64);
        Ok((record, *self.latency_totals_ns.last().expect("just pushed")))
    }
}

/// Convenience constructor used by the service and the benchmark harness.
pub fn control_plane_from_seed(
    seed: u64,
    node_count: u64,
    edge_density_ppm: u64,
    policies: PolicySet,
) -> Result<ControlPlane, StateError> {
    let state = crate::state::generate_state(seed, node_count, edge_density_ppm)?;
    Ok(ControlPlane::new(state, policies, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::{Decision, UNRESOLVED_TARGET_RULE};
    use crate::harness::benchmark_policy_set;
    use crate::intent::{Claim, Comparator, Intent, Justification};
    use crate::state::{MetricId, NodeStatus, Token};
    use std::collections::BTreeMap;

    fn plane() -> ControlPlane {
        control_plane_from_seed(42, 60, 20_000, benchmark_policy_set()).unwrap()
    }

    fn staging_restart_bytes(plane: &ControlPlane) -> Vec<u8> {
        let (token, _) = plane
            .view()
            .entries
            .iter()
            .find(|(_, n)| {
                n.tags_structural.contains("env=staging") && n.status == NodeStatus::Running
            })
            .expect("staging node");
        let intent = Intent {
            action_type: crate::intent::ActionType::RestartNode,
            justification: Justification {
                claims: vec![Claim {
                    comparator: Comparator::LE,
                    metric_id: MetricId::CpuPct,
                    subject_token: token.clone(),
                    threshold_milli: 90_000,
                }],
                text: "routine restart".to_string(),
            },
            parameters: BTreeMap::new(),
            target_token: token.clone(),
        };
        canonical_intent_bytes(&intent)
    }

    #[test]
    fn benign_submission_executes_and_seals() {
        let mut plane = plane();
        let raw = staging_restart_bytes(&plane);
        let epoch_before = plane.state().epoch;
        let (record, total) = plane.mediate(&raw).unwrap();
        assert_eq!(record.verdict.decision, Decision::Approved);
        assert!(record.executed_action.executed().is_some());
        assert!(total > 0);
        assert_eq!(plane.state().epoch, epoch_before + 1);
        assert_eq!(plane.view().epoch, epoch_before + 1);
        assert_eq!(plane.ledger().len(), 1);
        assert_eq!(plane.audit_credentials().len(), 1);
    }

    #[test]
    fn production_termination_is_denied_and_inert() {
        let mut plane = plane();
        let (token, _) = plane
            .view()
            .entries
            .iter()
            .find(|(_, n)| n.tags_structural.contains("env=production"))
            .expect("production node");
        let token = token.clone();
        let intent = Intent {
            action_type: crate::intent::ActionType::TerminateNode,
            justification: Justification {
                claims: vec![Claim {
                    comparator: Comparator::GE,
                    metric_id: MetricId::MemPct,
                    subject_token: token.clone(),
                    threshold_milli: 0,
                }],
                text: "cleanup".to_string(),
            },
            parameters: BTreeMap::new(),
            target_token: token,
        };
        let before = plane.state().to_canonical_bytes();
        let (record, _) = plane.mediate(&canonical_intent_bytes(&intent)).unwrap();
        assert_eq!(record.verdict.decision, Decision::DeniedPolicy);
        assert_eq!(record.executed_action, ExecutedField::Withheld);
        assert_eq!(plane.state().to_canonical_bytes(), before);
        assert!(plane.audit_credentials().is_empty());
    }

    #[test]
    fn garbage_bytes_are_recorded_as_denied_error() {
        let mut plane = plane();
        let (record, _) = plane.mediate(b"{not json").unwrap();
        assert_eq!(record.verdict.decision, Decision::DeniedError);
        assert_eq!(record.executed_action, ExecutedField::Withheld);
        assert_eq!(plane.ledger().len(), 1);
    }

    #[test]
    fn unknown_token_is_denied_with_unresolved_attribution() {
        let mut plane = plane();
        let intent = Intent {
            action_type: crate::intent::ActionType::RestartNode,
            justification: Justification {
                claims: vec![Claim {
                    comparator: Comparator::GE,
                    metric_id: MetricId::MemPct,
                    subject_token: Token("Node-ZZZZZZ".to_string()),
                    threshold_milli: 0,
                }],
                text: "ghost".to_string(),
            },
            parameters: BTreeMap::new(),
            target_token: Token("Node-ZZZZZZ".to_string()),
        };
        let (record, _) = plane.mediate(&canonical_intent_bytes(&intent)).unwrap();
        assert_eq!(record.verdict.decision, Decision::DeniedPolicy);
        assert_eq!(
            record.verdict.matched_rule_ids,
            vec![UNRESOLVED_TARGET_RULE.to_string()]
        );
        assert!(record.context_snapshot.entries.is_empty());
    }

    #[test]
    fn every_submission_produces_exactly_one_record() {
        let mut plane = plane();
        let raw = staging_restart_bytes(&plane);
        let submissions: Vec<Vec<u8>> =
            vec![raw.clone(), b"".to_vec(), b"[]".to_vec(), raw.clone()];
        for s in &submissions {
            plane.mediate(s).unwrap();
        }
        assert_eq!(plane.ledger().len(), submissions.len());
        let bytes = plane.ledger().to_jsonl_bytes();
        assert!(crate::chain::verify_ledger_bytes(&bytes).ok);
    }

    #[test]
    fn ledger_replays_clean_after_mixed_traffic() {
        let mut plane = plane();
        let raw = staging_restart_bytes(&plane);
        plane.mediate(&raw).unwrap();
        plane.mediate(b"junk").unwrap();
        plane.mediate(&raw).unwrap();
        let bytes = plane.ledger().to_jsonl_bytes();
        let report =
            crate::chain::replay_ledger_bytes(&bytes, plane.policies()).unwrap();
        assert_eq!(report.matched, 3);
        assert!(report.is_clean());
    }
}
