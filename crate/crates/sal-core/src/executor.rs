//! Mediated execution: the only path from an approved intent to a state
//! mutation.
//!
//! Execution is gated on the verdict and bound to the exact intent through
//! `source_intent_hash`, runs under a one-time scoped credential, and resolves
//! tokens through the privileged mapping right before the mutation. Everything
//! else in the artifact can only observe state transitions, not cause them:
//! [`ExecutedAction`] has no public constructor and `apply_action` is
//! crate-internal.

use std::collections::BTreeMap;

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::evaluator::Verdict;
use crate::intent::{canonical_intent_bytes, ActionType, Intent, ParamValue};
use crate::membrane::{reconstruct, MappingCache};
use crate::rng::derive_rng;
use crate::state::{apply_action, NodeId, Token, TrueState};

/// One-time execution credential scoped to a single action on a single node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopedCredential {
    pub consumed: bool,
    pub credential_id: String,
    pub issued_epoch: u64,
    pub scope_action: ActionType,
    pub scope_node_id: NodeId,
    pub ttl_actions: u32,
}

/// A de-obfuscated, credentialed mutation. Only [`Executor::execute`] builds
/// these, and only for approved verdicts; token-valued parameters are
/// resolved to node ids at construction (`peer_token` becomes
/// `peer_node_id`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutedAction {
    pub(crate) action_type: ActionType,
    pub(crate) credential_id: String,
    pub(crate) parameters: BTreeMap<String, ParamValue>,
    pub(crate) source_intent_hash: String,
    pub(crate) target_node_id: NodeId,
}

impl ExecutedAction {
    pub fn action_type(&self) -> ActionType {
        self.action_type
    }

    pub fn credential_id(&self) -> &str {
        &self.credential_id
    }

    pub fn parameters(&self) -> &BTreeMap<String, ParamValue> {
        &self.parameters
    }

    pub fn source_intent_hash(&self) -> &str {
        &self.source_intent_hash
    }

    pub fn target_node_id(&self) -> &NodeId {
        &self.target_node_id
    }

    #[cfg(test)]
    pub(crate) fn new_for_tests(
        action_type: ActionType,
        target_node_id: NodeId,
        parameters: BTreeMap<String, ParamValue>,
    ) -> Self {
        ExecutedAction {
            action_type,
            credential_id: "test-credential".to_string(),
            parameters,
            source_intent_hash: "test-intent-hash".to_string(),
            target_node_id,
        }
    }
}

/// Why an intent was withheld from execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WithholdReason {
    /// The verdict was anything other than APPROVED.
    NotApproved,
    /// The verdict's intent hash does not match this intent (splice attempt).
    VerdictIntentMismatch,
    /// A token in the intent has no mapping in the control plane cache.
    UnmappedToken(Token),
    /// The transition function rejected the mutation; the scoped credential
    /// was already minted and is consumed.
    ApplyFailed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecutionOutcome {
    Executed(ExecutedAction),
    Withheld(WithholdReason),
}

impl ExecutionOutcome {
    pub fn executed(&self) -> Option<&ExecutedAction> {
        match self {
            ExecutionOutcome::Executed(a) => Some(a),
            ExecutionOutcome::Withheld(_) => None,
        }
    }
}

/// Serialized execution operator. Owns every credential it ever minted, for
/// audit.
pub struct Executor {
    minted: Vec<ScopedCredential>,
    rng: ChaCha20Rng,
}

impl Executor {
    pub fn new(credential_seed: u64) -> Self {
        Executor {
            minted: Vec::new(),
            rng: derive_rng(credential_seed, "credentials", b""),
        }
    }

    fn mint_credential(
        &mut self,
        action: ActionType,
        node_id: &NodeId,
        epoch: u64,
    ) -> usize {
        let mut raw = [0u8; 16];
        self.rng.fill_bytes(&mut raw);
        self.minted.push(ScopedCredential {
            consumed: false,
            credential_id: hex::encode(raw),
            issued_epoch: epoch,
            scope_action: action,
            scope_node_id: node_id.clone(),
            ttl_actions: 1,
        });
        self.minted.len() - 1
    }

    /// Execute an evaluated intent against the current state.
    ///
    /// Approved verdicts mint a scoped credential, resolve the target (and any
    /// token parameters) through the privileged mapping, apply the mutation,
    /// and consume the credential. Every other case withholds and leaves the
    /// state untouched.
    pub fn execute(
        &mut self,
        intent: &Intent,
        verdict: &Verdict,
        state: &TrueState,
        cache: &MappingCache,
    ) -> (ExecutionOutcome, TrueState) {
        let expected_hash = canonical::sha256_hex(&canonical_intent_bytes(intent));
        if verdict.intent_hash != expected_hash {
            return (
                ExecutionOutcome::Withheld(WithholdReason::VerdictIntentMismatch),
                state.clone(),
            );
        }
        if !verdict.decision.is_approved() {
            return (
                ExecutionOutcome::Withheld(WithholdReason::NotApproved),
                state.clone(),
            );
        }
        let target_id = match reconstruct(&intent.target_token, cache) {
            Ok(id) => id.clone(),
            Err(_) => {
                return (
                    ExecutionOutcome::Withheld(WithholdReason::UnmappedToken(
                        intent.target_token.clone(),
                    )),
                    state.clone(),
                )
            }
        };

        let mut parameters = intent.parameters.clone();
        if intent.action_type == ActionType::ModifyRoute {
            let peer_token = match parameters.remove("peer_token") {
                Some(ParamValue::Str(s)) => Token(s),
                _ => {
                    return (
                        ExecutionOutcome::Withheld(WithholdReason::ApplyFailed(
                            "missing peer_token".to_string(),
                        )),
                        state.clone(),
                    )
                }
            };
            match reconstruct(&peer_token, cache) {
                Ok(peer_id) => {
                    parameters.insert(
                        "peer_node_id".to_string(),
                        ParamValue::Str(peer_id.0.clone()),
                    );
                }
                Err(_) => {
                    return (
                        ExecutionOutcome::Withheld(WithholdReason::UnmappedToken(peer_token)),
                        state.clone(),
                    )
                }
            }
        }

        let cred_idx = self.mint_credential(intent.action_type, &target_id, state.epoch);
        let action = ExecutedAction {
            action_type: intent.action_type,
            credential_id: self.minted[cred_idx].credential_id.clone(),
            parameters,
            source_intent_hash: expected_hash,
            target_node_id: target_id,
        };
        let result = apply_action(state, &action);
        self.minted[cred_idx].consumed = true;
        match result {
            Ok(next) => (ExecutionOutcome::Executed(action), next),
            Err(e) => (
                ExecutionOutcome::Withheld(WithholdReason::ApplyFailed(e.to_string())),
                state.clone(),
            ),
        }
    }

    /// Every credential ever minted in this session, with consumption flags.
    pub fn audit_credentials(&self) -> &[ScopedCredential] {
        &self.minted
    }
}
