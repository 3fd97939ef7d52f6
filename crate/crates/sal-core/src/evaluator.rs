//! Two-stage deterministic evaluation: declarative policy rules over resolved
//! true-state attributes, then justification claims against the evaluation
//! context. Both stages always run so denials carry full attribution, and
//! approval requires both to pass.
//!
//! Policy semantics are explicit-allow with deny-overrides: an intent passes
//! the policy stage iff at least one ALLOW rule matches and no DENY rule
//! matches. `region_restriction` and `blast_radius_limit` are
//! violation-oriented conditions: the rule matches when the restriction is
//! breached, which is how DENY rules express "only permitted in/under X".

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canonical;
use crate::intent::{canonical_intent_bytes, ActionType, Claim, Intent};
use crate::membrane::MappingCache;
use crate::state::{
    Aggregates, ContextSnapshot, NodeClass, NodeStatus, Region, SnapshotEntry, TrueState,
};

/// Pseudo rule id recorded when the intent's target token cannot be resolved.
pub const UNRESOLVED_TARGET_RULE: &str = "UNRESOLVED_TARGET";

pub const POLICY_FORMAT: &str = "sal-policy";
pub const POLICY_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PolicyEffect {
    Allow,
    Deny,
}

/// Attribute predicates over the resolved target. Every present constraint
/// must hold for the rule to match; an empty match set matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_class_in: Option<BTreeSet<NodeClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_in: Option<BTreeSet<Region>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_in: Option<BTreeSet<NodeStatus>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags_all: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags_none: Option<BTreeSet<String>>,
}

/// Blast-radius constraint: matches when executing the (destructive) action
/// would push the terminated fraction of `node_class` above
/// `max_fraction_milli` millionths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlastRadiusLimit {
    pub max_fraction_milli: u64,
    pub node_class: NodeClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blast_radius_limit: Option<BlastRadiusLimit>,
    pub effect: PolicyEffect,
    pub match_action: String,
    #[serde(default)]
    pub match_target: TargetMatch,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_restriction: Option<BTreeSet<Region>>,
    pub rule_id: String,
}

impl PolicyRule {
    pub fn allow(rule_id: &str, match_action: &str) -> Self {
        Self::new(rule_id, match_action, PolicyEffect::Allow)
    }

    pub fn deny(rule_id: &str, match_action: &str) -> Self {
        Self::new(rule_id, match_action, PolicyEffect::Deny)
    }

    fn new(rule_id: &str, match_action: &str, effect: PolicyEffect) -> Self {
        PolicyRule {
            blast_radius_limit: None,
            effect,
            match_action: match_action.to_string(),
            match_target: TargetMatch::default(),
            region_restriction: None,
            rule_id: rule_id.to_string(),
        }
    }

    pub fn classes(mut self, classes: &[NodeClass]) -> Self {
        self.match_target.node_class_in = Some(classes.iter().copied().collect());
        self
    }

    pub fn regions(mut self, regions: &[Region]) -> Self {
        self.match_target.region_in = Some(regions.iter().copied().collect());
        self
    }

    pub fn statuses(mut self, statuses: &[NodeStatus]) -> Self {
        self.match_target.status_in = Some(statuses.iter().copied().collect());
        self
    }

    pub fn tags_all(mut self, tags: &[&str]) -> Self {
        self.match_target.tags_all = Some(tags.iter().map(|t| t.to_string()).collect());
        self
    }

    pub fn tags_none(mut self, tags: &[&str]) -> Self {
        self.match_target.tags_none = Some(tags.iter().map(|t| t.to_string()).collect());
        self
    }

    pub fn blast_radius(mut self, node_class: NodeClass, max_fraction_milli: u64) -> Self {
        self.blast_radius_limit = Some(BlastRadiusLimit {
            max_fraction_milli,
            node_class,
        });
        self
    }

    pub fn restrict_regions(mut self, permitted: &[Region]) -> Self {
        self.region_restriction = Some(permitted.iter().copied().collect());
        self
    }
}

/// Ordered rule list plus the hash of its canonical document form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySet {
    pub policy_hash: String,
    pub rules: Vec<PolicyRule>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy document is not valid JSON: {0}")]
    Malformed(String),
    #[error("policy document has wrong format or version")]
    WrongFormat,
    #[error("rule {0} is invalid: {1}")]
    InvalidRule(String, String),
    #[error("duplicate rule_id {0}")]
    DuplicateRuleId(String),
}

impl PolicySet {
    pub fn from_rules(rules: Vec<PolicyRule>) -> Result<Self, PolicyError> {
        let mut seen = BTreeSet::new();
        for rule in &rules {
            if rule.rule_id.is_empty() {
                return Err(PolicyError::InvalidRule(
                    rule.rule_id.clone(),
                    "empty rule_id".to_string(),
                ));
            }
            if !seen.insert(rule.rule_id.clone()) {
                return Err(PolicyError::DuplicateRuleId(rule.rule_id.clone()));
            }
            if let Some(b) = &rule.blast_radius_limit {
                if b.max_fraction_milli > 1_000_000 {
                    return Err(PolicyError::InvalidRule(
                        rule.rule_id.clone(),
                        format!("max_fraction_milli {} out of range", b.max_fraction_milli),
                    ));
                }
            }
            if rule.match_action != "*" && !rule.match_action.contains('*') {
                let known = crate::intent::ALL_ACTIONS
                    .iter()
                    .any(|a| a.wire_name() == rule.match_action);
                if !known {
                    return Err(PolicyError::InvalidRule(
                        rule.rule_id.clone(),
                        format!("unknown action {}", rule.match_action),
                    ));
                }
            }
        }
        let policy_hash = hash_rules(&rules);
        Ok(PolicySet { policy_hash, rules })
    }

    pub fn from_document_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let value: Value =
            serde_json::from_slice(bytes).map_err(|e| PolicyError::Malformed(e.to_string()))?;
        Self::from_document_value(&value)
    }

    pub fn from_document_value(value: &Value) -> Result<Self, PolicyError> {
        let map = value.as_object().ok_or(PolicyError::WrongFormat)?;
        if map.len() != 3
            || map.get("format").and_then(Value::as_str) != Some(POLICY_FORMAT)
            || map.get("version").and_then(Value::as_u64) != Some(POLICY_VERSION)
        {
            return Err(PolicyError::WrongFormat);
        }
        let rules_value = map.get("rules").ok_or(PolicyError::WrongFormat)?;
        let rules: Vec<PolicyRule> = serde_json::from_value(rules_value.clone())
            .map_err(|e| PolicyError::Malformed(e.to_string()))?;
        Self::from_rules(rules)
    }

    /// Canonical policy document: the bytes whose SHA-256 is `policy_hash`.
    pub fn to_document_bytes(&self) -> Vec<u8> {
        policy_document_bytes(&self.rules)
    }

    /// Self-consistency: `policy_hash` recomputes from the rules.
    pub fn verify_hash(&self) -> bool {
        hash_rules(&self.rules) == self.policy_hash
    }
}

fn policy_document_bytes(rules: &[PolicyRule]) -> Vec<u8> {
    #[derive(Serialize)]
    struct Document<'a> {
        format: &'static str,
        rules: &'a [PolicyRule],
        version: u64,
    }
    canonical::to_canonical_bytes(&Document {
        format: POLICY_FORMAT,
        rules,
        version: POLICY_VERSION,
    })
}

fn hash_rules(rules: &[PolicyRule]) -> String {
    canonical::sha256_hex(&policy_document_bytes(rules))
}

/// Simple `*` wildcard match over action names.
fn glob_matches(pattern: &str, value: &str) -> bool {
    let p: Vec<u8> = pattern.bytes().collect();
    let v: Vec<u8> = value.bytes().collect();
    let (mut pi, mut vi) = (0usize, 0usize);
    let (mut star, mut backtrack) = (usize::MAX, 0usize);
    while vi < v.len() {
        if pi < p.len() && (p[pi] == v[vi]) {
            pi += 1;
            vi += 1;
        } else if pi < p.len() && p[pi] == b'*' {
            star = pi;
            backtrack = vi;
            pi += 1;
        } else if star != usize::MAX {
            pi = star + 1;
            backtrack += 1;
            vi = backtrack;
        } else {
            return false;
        }
    }
    while pi < p.len() && p[pi] == b'*' {
        pi += 1;
    }
    pi == p.len()
}

/// Dotted lookup path into the policy input document, pre-split at compile
/// time.
#[derive(Debug, Clone, PartialEq, Eq)]
struct DocPath(Vec<String>);

impl DocPath {
    fn new(path: &str) -> Self {
        DocPath(path.split('.').map(str::to_string).collect())
    }

    fn lookup<'v>(&self, doc: &'v Value) -> Option<&'v Value> {
        let mut cursor = doc;
        for segment in &self.0 {
            cursor = cursor.as_object()?.get(segment)?;
        }
        Some(cursor)
    }

    fn text<'v>(&self, doc: &'v Value) -> Option<&'v str> {
        self.lookup(doc)?.as_str()
    }

    fn count(&self, doc: &Value) -> u64 {
        self.lookup(doc).and_then(Value::as_u64).unwrap_or(0)
    }
}

/// One compiled rule condition, interpreted per query against the input
/// document. Every condition must hold for the rule to match.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Condition {
    /// Action name matches the glob pattern.
    ActionGlob(String),
    /// The text at `path` is one of `values`.
    TextIn { path: DocPath, values: BTreeSet<String> },
    /// The text at `path` is present and not one of `values`
    /// (violation-oriented restriction).
    TextNotIn { path: DocPath, values: BTreeSet<String> },
    /// The string array at `path` contains every one of `values`.
    ContainsAll { path: DocPath, values: Vec<String> },
    /// The string array at `path`, if present, contains none of `values`.
    ContainsNone { path: DocPath, values: Vec<String> },
    /// Executing the (destructive) action would push the terminated fraction
    /// of the class over the limit.
    BlastRadius {
        class_label: String,
        max_fraction_milli: u64,
        terminated_path: DocPath,
        total_path: DocPath,
    },
}

fn array_contains(doc: &Value, path: &DocPath, needle: &str) -> Option<bool> {
    let items = path.lookup(doc)?.as_array()?;
    Some(items.iter().any(|v| v.as_str() == Some(needle)))
}

impl Condition {
    fn eval(&self, action: &str, doc: &Value) -> bool {
        match self {
            Condition::ActionGlob(pattern) => glob_matches(pattern, action),
            Condition::TextIn { path, values } => match path.text(doc) {
                Some(found) => values.contains(found),
                None => false,
            },
            Condition::TextNotIn { path, values } => match path.text(doc) {
                Some(found) => !values.contains(found),
                None => false,
            },
            Condition::ContainsAll { path, values } => values
                .iter()
                .all(|v| array_contains(doc, path, v).unwrap_or(false)),
            Condition::ContainsNone { path, values } => values
                .iter()
                .all(|v| !array_contains(doc, path, v).unwrap_or(false)),
            Condition::BlastRadius {
                class_label,
                max_fraction_milli,
                terminated_path,
                total_path,
            } => {
                if action != "TERMINATE_NODE" {
                    return false;
                }
                if DocPath::new("target.node_class").text(doc) != Some(class_label) {
                    return false;
                }
                let total = total_path.count(doc);
                let terminated = terminated_path.count(doc);
                total == 0
                    || (terminated + 1) * 1_000_000 > max_fraction_milli * total
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct CompiledRule {
    conditions: Vec<Condition>,
    effect: PolicyEffect,
    rule_id: String,
}

fn compile_rule(rule: &PolicyRule) -> CompiledRule {
    let mut conditions = vec![Condition::ActionGlob(rule.match_action.clone())];
    let mt = &rule.match_target;
    if let Some(classes) = &mt.node_class_in {
        conditions.push(Condition::TextIn {
            path: DocPath::new("target.node_class"),
            values: classes.iter().map(|c| c.wire_name().to_string()).collect(),
        });
    }
    if let Some(regions) = &mt.region_in {
        conditions.push(Condition::TextIn {
            path: DocPath::new("target.region"),
            values: regions.iter().map(|r| r.wire_label().to_string()).collect(),
        });
    }
    if let Some(statuses) = &mt.status_in {
        conditions.push(Condition::TextIn {
            path: DocPath::new("target.status"),
            values: statuses.iter().map(|s| s.wire_name().to_string()).collect(),
        });
    }
    if let Some(tags) = &mt.tags_all {
        conditions.push(Condition::ContainsAll {
            path: DocPath::new("target.tags"),
            values: tags.iter().cloned().collect(),
        });
    }
    if let Some(tags) = &mt.tags_none {
        conditions.push(Condition::ContainsNone {
            path: DocPath::new("target.tags"),
            values: tags.iter().cloned().collect(),
        });
    }
    if let Some(permitted) = &rule.region_restriction {
        conditions.push(Condition::TextNotIn {
            path: DocPath::new("target.region"),
            values: permitted.iter().map(|r| r.wire_label().to_string()).collect(),
        });
    }
    if let Some(blast) = &rule.blast_radius_limit {
        let label = blast.node_class.wire_name();
        conditions.push(Condition::BlastRadius {
            class_label: label.to_string(),
            max_fraction_milli: blast.max_fraction_milli,
            terminated_path: DocPath::new(&format!("fleet.class_terminated.{label}")),
            total_path: DocPath::new(&format!("fleet.class_total.{label}")),
        });
    }
    CompiledRule {
        conditions,
        effect: rule.effect,
        rule_id: rule.rule_id.clone(),
    }
}

/// The rule engine: policy rules compiled to condition programs, interpreted
/// per query over a JSON input document. Compile once per policy set; the
/// engine itself is immutable and shareable.
#[derive(Debug, Clone)]
pub struct PolicyEngine {
    policy_hash: String,
    rules: Vec<CompiledRule>,
}

impl PolicyEngine {
    pub fn compile(policies: &PolicySet) -> Self {
        PolicyEngine {
            policy_hash: policies.policy_hash.clone(),
            rules: policies.rules.iter().map(compile_rule).collect(),
        }
    }

    pub fn policy_hash(&self) -> &str {
        &self.policy_hash
    }

    /// Rule-match pass shared by the live pipeline and replay.
    ///
    /// Returns `(passed, matched_rule_ids)`; passing requires at least one
    /// ALLOW match and zero DENY matches. A query whose target never resolved
    /// cannot pass and is attributed to [`UNRESOLVED_TARGET_RULE`].
    pub fn match_rules(&self, query: &PolicyQuery) -> (bool, Vec<String>) {
        if !query.resolved {
            return (false, vec![UNRESOLVED_TARGET_RULE.to_string()]);
        }
        let mut matched = Vec::new();
        let mut any_allow = false;
        let mut any_deny = false;
        for rule in &self.rules {
            if rule
                .conditions
                .iter()
                .all(|c| c.eval(&query.action, &query.document))
            {
                matched.push(rule.rule_id.clone());
                match rule.effect {
                    PolicyEffect::Allow => any_allow = true,
                    PolicyEffect::Deny => any_deny = true,
                }
            }
        }
        (any_allow && !any_deny, matched)
    }
}

/// The input document one evaluation runs against: the requested action, the
/// resolved target's attributes, and a fleet inventory summary. Rules read
/// the document by path, never native state, which keeps the engine decoupled
/// from the state schema like the external engine it replaces.
///
/// The live builder derives the fleet summary from the full state; the replay
/// builder reads the summary recorded in the context snapshot. At a given
/// epoch both derivations are equal by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyQuery {
    action: String,
    aggregates: Aggregates,
    document: Value,
    resolved: bool,
}

fn fleet_value(aggregates: &Aggregates) -> Value {
    let class_map = |counts: &BTreeMap<NodeClass, u64>| {
        Value::Object(
            crate::state::ALL_CLASSES
                .iter()
                .map(|c| {
                    (
                        c.wire_name().to_string(),
                        Value::from(counts.get(c).copied().unwrap_or(0)),
                    )
                })
                .collect(),
        )
    };
    let mut fleet = serde_json::Map::new();
    fleet.insert(
        "class_terminated".to_string(),
        class_map(&aggregates.class_terminated_counts),
    );
    fleet.insert("class_total".to_string(), class_map(&aggregates.class_counts));
    fleet.insert("node_total".to_string(), Value::from(aggregates.node_total));
    Value::Object(fleet)
}

/// Document form of the node inventory: the engine's data view of the fleet,
/// decoupled from the native state schema.
fn inventory_value(state: &TrueState) -> Value {
    Value::Array(
        state
            .nodes
            .values()
            .map(|n| {
                let mut m = serde_json::Map::new();
                m.insert(
                    "node_class".to_string(),
                    Value::from(n.node_class.wire_name()),
                );
                m.insert("status".to_string(), Value::from(n.status.wire_name()));
                Value::Object(m)
            })
            .collect(),
    )
}

/// Fold the inventory document into per-class totals. Produces exactly
/// [`compute_aggregates`]' numbers (pinned by tests); replay reads the
/// recorded copy instead of re-deriving.
fn derive_fleet_counts(inventory: &Value) -> Aggregates {
    let mut class_counts: BTreeMap<NodeClass, u64> = crate::state::ALL_CLASSES
        .iter()
        .map(|c| (*c, 0))
        .collect();
    let mut class_terminated_counts = class_counts.clone();
    let rows = inventory.as_array().map(Vec::as_slice).unwrap_or(&[]);
    let mut node_total = 0u64;
    for row in rows {
        node_total += 1;
        let class = crate::state::ALL_CLASSES
            .iter()
            .find(|c| Some(c.wire_name()) == row.get("node_class").and_then(Value::as_str));
        if let Some(class) = class {
            *class_counts.entry(*class).or_insert(0) += 1;
            if row.get("status").and_then(Value::as_str) == Some("TERMINATED") {
                *class_terminated_counts.entry(*class).or_insert(0) += 1;
            }
        }
    }
    Aggregates {
        class_counts,
        class_terminated_counts,
        node_total,
    }
}

fn target_value(
    node_class: NodeClass,
    region: Region,
    status: NodeStatus,
    tags: &BTreeSet<String>,
) -> Value {
    let mut target = serde_json::Map::new();
    target.insert(
        "node_class".to_string(),
        Value::from(node_class.wire_name()),
    );
    target.insert("region".to_string(), Value::from(region.wire_label()));
    target.insert("status".to_string(), Value::from(status.wire_name()));
    target.insert(
        "tags".to_string(),
        Value::Array(tags.iter().map(|t| Value::from(t.as_str())).collect()),
    );
    Value::Object(target)
}

impl PolicyQuery {
    fn assemble(
        action: ActionType,
        aggregates: Aggregates,
        target: Option<Value>,
    ) -> Self {
        let mut doc = serde_json::Map::new();
        doc.insert("action".to_string(), Value::from(action.wire_name()));
        doc.insert("fleet".to_string(), fleet_value(&aggregates));
        let resolved = target.is_some();
        if let Some(t) = target {
            doc.insert("target".to_string(), t);
        }
        PolicyQuery {
            action: action.wire_name().to_string(),
            aggregates,
            document: Value::Object(doc),
            resolved,
        }
    }

    /// Assemble the document from the live state: project the node inventory
    /// into document form, fold it into the fleet summary, and attach the
    /// resolved target's attributes.
    pub fn from_live(
        action: ActionType,
        target: Option<&crate::state::NodeRecord>,
        state: &TrueState,
    ) -> Self {
        let inventory = inventory_value(state);
        let aggregates = derive_fleet_counts(&inventory);
        let target = target.map(|n| target_value(n.node_class, n.region, n.status, &n.tags));
        Self::assemble(action, aggregates, target)
    }

    /// Assemble the document from a recorded context snapshot, for replay.
    pub fn from_snapshot(
        action: ActionType,
        target: Option<&SnapshotEntry>,
        aggregates: &Aggregates,
    ) -> Self {
        let target = target.map(|e| {
            target_value(e.node_class, e.region, e.status, &e.tags_structural)
        });
        Self::assemble(action, aggregates.clone(), target)
    }

    pub fn is_resolved(&self) -> bool {
        self.resolved
    }

    /// The full input document, for inspection.
    pub fn document(&self) -> &Value {
        &self.document
    }

    /// The fleet summary this query was evaluated under, for recording.
    pub fn into_aggregates(self) -> Aggregates {
        self.aggregates
    }
}

/// One-shot rule-match pass: compile and run. Long-lived callers should hold
/// a [`PolicyEngine`] instead.
pub fn match_policy_rules(query: &PolicyQuery, policies: &PolicySet) -> (bool, Vec<String>) {
    PolicyEngine::compile(policies).match_rules(query)
}

/// Policy stage over the live true state: resolve the target through the
/// mapping cache, assemble the input document, run the rule-match pass.
pub fn evaluate_policy(
    intent: &Intent,
    state: &TrueState,
    cache: &MappingCache,
    policies: &PolicySet,
) -> (bool, Vec<String>) {
    let node = cache
        .node_id_for(&intent.target_token)
        .and_then(|id| state.nodes.get(id));
    let query = PolicyQuery::from_live(intent.action_type, node, state);
    match_policy_rules(&query, policies)
}

/// A claim that did not hold, with the observed value (`None` when the
/// subject token is absent from the snapshot).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailedClaim {
    pub claim: Claim,
    pub observed_milli: Option<i64>,
}

fn entry_in<'e>(
    entries: &'e [SnapshotEntry],
    token: &crate::state::Token,
) -> Option<&'e SnapshotEntry> {
    entries
        .binary_search_by(|e| e.token.cmp(token))
        .ok()
        .map(|i| &entries[i])
}

/// Consistency leg over the canonical entry list. The pipeline calls this
/// before the snapshot is assembled; [`evaluate_consistency`] and replay call
/// it through the stored snapshot. One implementation, no drift.
pub fn consistency_over_entries(
    intent: &Intent,
    entries: &[SnapshotEntry],
) -> (bool, Vec<FailedClaim>) {
    let mut failed = Vec::new();
    for claim in &intent.justification.claims {
        let observed = entry_in(entries, &claim.subject_token)
            .and_then(|e| e.telemetry.get(claim.metric_id));
        let holds = match observed {
            Some(v) => claim.comparator.holds(v, claim.threshold_milli),
            None => false,
        };
        if !holds {
            failed.push(FailedClaim {
                claim: claim.clone(),
                observed_milli: observed,
            });
        }
    }
    let target_present = entry_in(entries, &intent.target_token).is_some();
    let claims_required =
        intent.action_type.is_mutating() && intent.justification.claims.is_empty();
    let passed = target_present && !claims_required && failed.is_empty();
    (passed, failed)
}

/// Consistency stage: every claim must hold against the snapshot, mutating
/// actions must carry at least one claim, and the target must appear in the
/// snapshot.
pub fn evaluate_consistency(
    intent: &Intent,
    snapshot: &ContextSnapshot,
) -> (bool, Vec<FailedClaim>) {
    consistency_over_entries(intent, &snapshot.entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Approved,
    DeniedPolicy,
    DeniedConsistency,
    DeniedError,
}

impl Decision {
    pub fn is_approved(self) -> bool {
        self == Decision::Approved
    }
}

/// Evaluation outcome with per-stage attribution. `intent_hash` binds the
/// verdict to the exact canonical intent it was computed for, so a verdict
/// cannot be spliced onto a different intent at execution time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Verdict {
    pub decision: Decision,
    pub failed_claims: Vec<FailedClaim>,
    pub intent_hash: String,
    pub matched_rule_ids: Vec<String>,
    pub policy_hash: String,
}

impl Verdict {
    /// Fail-safe verdict for internal faults; records a denial with no
    /// attribution legs.
    pub fn denied_error(intent_hash: String, policy_hash: String) -> Self {
        Verdict {
            decision: Decision::DeniedError,
            failed_claims: Vec::new(),
            intent_hash,
            matched_rule_ids: Vec::new(),
            policy_hash,
        }
    }
}

/// Fold the two stage outcomes into a verdict. Policy runs first and owns the
/// attribution when it fails; consistency cannot rescue a policy denial.
pub fn combine_verdict(
    policy_passed: bool,
    matched_rule_ids: Vec<String>,
    consistency_passed: bool,
    failed_claims: Vec<FailedClaim>,
    intent_hash: String,
    policy_hash: String,
) -> Verdict {
    let decision = if policy_passed && consistency_passed {
        Decision::Approved
    } else if !policy_passed {
        Decision::DeniedPolicy
    } else {
        Decision::DeniedConsistency
    };
    Verdict {
        decision,
        failed_claims,
        intent_hash,
        matched_rule_ids,
        policy_hash,
    }
}

/// Combine both stages against a prepared snapshot. This is the exact
/// composition replay re-runs against recorded snapshots, and the mediation
/// pipeline runs the same legs with timing in between, so live evaluation and
/// replay cannot drift apart.
pub fn evaluate_from_snapshot(
    intent: &Intent,
    snapshot: &ContextSnapshot,
    policies: &PolicySet,
) -> Verdict {
    evaluate_from_snapshot_with(intent, snapshot, &PolicyEngine::compile(policies))
}

/// [`evaluate_from_snapshot`] against an already-compiled engine; replay uses
/// this to compile once per ledger.
pub fn evaluate_from_snapshot_with(
    intent: &Intent,
    snapshot: &ContextSnapshot,
    engine: &PolicyEngine,
) -> Verdict {
    let query = PolicyQuery::from_snapshot(
        intent.action_type,
        snapshot.entry(&intent.target_token),
        &snapshot.aggregates,
    );
    let (policy_passed, matched_rule_ids) = engine.match_rules(&query);
    let (consistency_passed, failed_claims) = evaluate_consistency(intent, snapshot);
    combine_verdict(
        policy_passed,
        matched_rule_ids,
        consistency_passed,
        failed_claims,
        canonical::sha256_hex(&canonical_intent_bytes(intent)),
        engine.policy_hash().to_string(),
    )
}

/// Full evaluation over mutually consistent inputs. A snapshot that does not
/// match the live state epoch is an internal fault and yields a
/// `DENIED_ERROR` verdict (default-deny).
pub fn evaluate(
    intent: &Intent,
    state: &TrueState,
    _cache: &MappingCache,
    snapshot: &ContextSnapshot,
    policies: &PolicySet,
) -> Verdict {
    if snapshot.epoch != state.epoch {
        return Verdict::denied_error(
            canonical::sha256_hex(&canonical_intent_bytes(intent)),
            policies.policy_hash.clone(),
        );
    }
    evaluate_from_snapshot(intent, snapshot, policies)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::benchmark_policy_set;
    use crate::intent::{parse_intent, Justification};
    use crate::membrane::project;
    use crate::state::{generate_state, MetricId, NodeRecord, Token};

    fn intent_for(action: ActionType, token: &Token, claims: Vec<Claim>) -> Intent {
        let parameters = match action {
            ActionType::ScaleGroup => {
                [("replicas".to_string(), crate::intent::ParamValue::Int(4))].into()
            }
            ActionType::GrantRole => [(
                "role".to_string(),
                crate::intent::ParamValue::Str("log-reader".to_string()),
            )]
            .into(),
            _ => Default::default(),
        };
        Intent {
            action_type: action,
            justification: Justification {
                claims,
                text: "test".to_string(),
            },
            parameters,
            target_token: token.clone(),
        }
    }

    fn true_claim(token: &Token) -> Claim {
        Claim {
            comparator: crate::intent::Comparator::GE,
            metric_id: MetricId::MemPct,
            subject_token: token.clone(),
            threshold_milli: 0,
        }
    }

    fn find_node<F: Fn(&NodeRecord) -> bool>(state: &TrueState, pred: F) -> Option<&NodeRecord> {
        state.nodes.values().find(|n| pred(n))
    }

    #[test]
    fn document_fleet_counts_match_native_aggregates() {
        for seed in [1u64, 7, 42] {
            let mut state = generate_state(seed, 40, 30_000).unwrap();
            // Terminate a few nodes out-of-band so terminated counts are
            // exercised.
            let ids: Vec<_> = state.nodes.keys().cloned().collect();
            for id in ids.iter().take(5) {
                state.nodes.get_mut(id).unwrap().status = NodeStatus::Terminated;
            }
            let doc_derived = derive_fleet_counts(&inventory_value(&state));
            assert_eq!(doc_derived, crate::state::compute_aggregates(&state));
        }
    }

    #[test]
    fn live_and_snapshot_documents_agree() {
        let state = generate_state(9, 30, 40_000).unwrap();
        let (view, cache) = project(&state, 3);
        for (token, _) in view.entries.iter().take(8) {
            let id = cache.node_id_for(token).unwrap();
            let node = &state.nodes[id];
            let snapshot = crate::state::snapshot_context(&state, &cache, &view, token).unwrap();
            let live = PolicyQuery::from_live(ActionType::TerminateNode, Some(node), &state);
            let recorded = PolicyQuery::from_snapshot(
                ActionType::TerminateNode,
                snapshot.entry(token),
                &snapshot.aggregates,
            );
            assert_eq!(live.document(), recorded.document());
        }
    }

    #[test]
    fn glob_matching() {
        assert!(glob_matches("*", "TERMINATE_NODE"));
        assert!(glob_matches("TERMINATE_NODE", "TERMINATE_NODE"));
        assert!(glob_matches("TERMINATE_*", "TERMINATE_NODE"));
        assert!(glob_matches("*_NODE", "RESTART_NODE"));
        assert!(!glob_matches("TERMINATE_NODE", "RESTART_NODE"));
        assert!(!glob_matches("", "RESTART_NODE"));
    }

    #[test]
    fn policy_hash_round_trips_through_document() {
        let set = benchmark_policy_set();
        assert!(set.verify_hash());
        let reloaded = PolicySet::from_document_bytes(&set.to_document_bytes()).unwrap();
        assert_eq!(reloaded.policy_hash, set.policy_hash);
        assert_eq!(reloaded.rules, set.rules);
    }

    #[test]
    fn protected_production_termination_fails_policy() {
        let state = generate_state(42, 60, 0).unwrap();
        let (_, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let node = find_node(&state, |n| {
            n.tags.contains("env=production") && n.tags.contains("criticality=critical")
        })
        .expect("protected node in fixture");
        let token = cache.token_for(&node.node_id).unwrap().clone();
        let intent = intent_for(ActionType::TerminateNode, &token, vec![true_claim(&token)]);
        let (passed, matched) = evaluate_policy(&intent, &state, &cache, &set);
        assert!(!passed);
        assert!(matched.iter().any(|id| id.starts_with("deny-")));
    }

    #[test]
    fn cross_region_route_fails_policy() {
        let state = generate_state(42, 60, 0).unwrap();
        let (_, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let node = find_node(&state, |n| n.region.geo() != "eu").unwrap();
        let token = cache.token_for(&node.node_id).unwrap().clone();
        let mut intent = intent_for(ActionType::ModifyRoute, &token, vec![true_claim(&token)]);
        intent.parameters = [
            (
                "peer_token".to_string(),
                crate::intent::ParamValue::Str(token.0.clone()),
            ),
            (
                "route_op".to_string(),
                crate::intent::ParamValue::Str("add".to_string()),
            ),
        ]
        .into();
        let (passed, matched) = evaluate_policy(&intent, &state, &cache, &set);
        assert!(!passed);
        assert!(matched.iter().any(|id| id.starts_with("deny-route-outside-eu")));
    }

    #[test]
    fn staging_restart_passes_policy() {
        let state = generate_state(42, 60, 0).unwrap();
        let (_, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let node = find_node(&state, |n| {
            n.tags.contains("env=staging") && n.status != NodeStatus::Terminated
        })
        .unwrap();
        let token = cache.token_for(&node.node_id).unwrap().clone();
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let (passed, matched) = evaluate_policy(&intent, &state, &cache, &set);
        assert!(passed, "matched: {matched:?}");
        assert!(matched.iter().any(|id| id.starts_with("allow-restart-staging")));
        assert!(!matched.iter().any(|id| id.starts_with("deny-")));
    }

    #[test]
    fn unresolved_target_is_default_denied() {
        let state = generate_state(42, 5, 0).unwrap();
        let (_, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let token = Token("Node-ZZZZZZ".to_string());
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let (passed, matched) = evaluate_policy(&intent, &state, &cache, &set);
        assert!(!passed);
        assert_eq!(matched, vec![UNRESOLVED_TARGET_RULE.to_string()]);
    }

    #[test]
    fn consistency_rejects_contradicted_claims() {
        let state = generate_state(42, 10, 0).unwrap();
        let (view, cache) = project(&state, 7);
        let token = view.entries.keys().next().unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();

        // Claimed CPU above 90% while telemetry reads nominal 15%.
        let claim = Claim {
            comparator: crate::intent::Comparator::GT,
            metric_id: MetricId::CpuPct,
            subject_token: token.clone(),
            threshold_milli: 90_000,
        };
        let intent = intent_for(ActionType::RestartNode, &token, vec![claim.clone()]);
        let (passed, failed) = evaluate_consistency(&intent, &snapshot);
        assert!(!passed);
        assert_eq!(failed, vec![FailedClaim { claim, observed_milli: Some(15_000) }]);

        // Claimed critical temperature while telemetry reads nominal 45C.
        let claim = Claim {
            comparator: crate::intent::Comparator::GT,
            metric_id: MetricId::TempC,
            subject_token: token.clone(),
            threshold_milli: 90_000,
        };
        let intent = intent_for(ActionType::RestartNode, &token, vec![claim]);
        let (passed, failed) = evaluate_consistency(&intent, &snapshot);
        assert!(!passed);
        assert_eq!(failed[0].observed_milli, Some(45_000));

        // Always-true comparator on an existing target passes.
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let (passed, failed) = evaluate_consistency(&intent, &snapshot);
        assert!(passed);
        assert!(failed.is_empty());
    }

    #[test]
    fn mutating_intent_without_claims_fails_consistency() {
        let state = generate_state(42, 5, 0).unwrap();
        let (view, cache) = project(&state, 7);
        let token = view.entries.keys().next().unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        let intent = intent_for(ActionType::RestartNode, &token, vec![]);
        let (passed, failed) = evaluate_consistency(&intent, &snapshot);
        assert!(!passed);
        assert!(failed.is_empty());
    }

    #[test]
    fn evaluation_precedence_and_conjunction() {
        let state = generate_state(42, 60, 0).unwrap();
        let (view, cache) = project(&state, 7);
        let set = benchmark_policy_set();

        // Policy violation wins the attribution even when claims also fail.
        let protected = find_node(&state, |n| n.tags.contains("env=production")).unwrap();
        let token = cache.token_for(&protected.node_id).unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        let bad_claim = Claim {
            comparator: crate::intent::Comparator::GT,
            metric_id: MetricId::CpuPct,
            subject_token: token.clone(),
            threshold_milli: 90_000,
        };
        let intent = intent_for(ActionType::TerminateNode, &token, vec![bad_claim.clone()]);
        let verdict = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(verdict.decision, Decision::DeniedPolicy);
        assert!(!verdict.failed_claims.is_empty());

        // Policy-compliant but contradicted claims: denied at consistency.
        let staging = find_node(&state, |n| {
            n.tags.contains("env=staging") && n.status == NodeStatus::Running
        })
        .unwrap();
        let token = cache.token_for(&staging.node_id).unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        let mut claim = bad_claim.clone();
        claim.subject_token = token.clone();
        let intent = intent_for(ActionType::RestartNode, &token, vec![claim]);
        let verdict = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(verdict.decision, Decision::DeniedConsistency);

        // Benign intent with truthful claims is approved.
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let verdict = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(verdict.decision, Decision::Approved);
        let (p, _) = evaluate_policy(&intent, &state, &cache, &set);
        let (c, _) = evaluate_consistency(&intent, &snapshot);
        assert_eq!(verdict.decision.is_approved(), p && c);
    }

    #[test]
    fn repeated_evaluation_is_byte_identical() {
        let state = generate_state(42, 30, 20_000).unwrap();
        let (view, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let token = view.entries.keys().nth(4).unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let a = evaluate(&intent, &state, &cache, &snapshot, &set);
        let b = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(
            canonical::to_canonical_bytes(&a),
            canonical::to_canonical_bytes(&b)
        );
    }

    #[test]
    fn epoch_mismatch_is_denied_error() {
        let state = generate_state(42, 5, 0).unwrap();
        let (view, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let token = view.entries.keys().next().unwrap().clone();
        let mut snapshot =
            crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        snapshot.epoch += 1;
        let intent = intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
        let verdict = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(verdict.decision, Decision::DeniedError);
    }

    #[test]
    fn adding_a_matching_deny_never_rescues() {
        // Deny-overrides monotonicity: appending a catch-all DENY can only
        // move verdicts toward denial.
        let state = generate_state(42, 30, 0).unwrap();
        let (_, cache) = project(&state, 7);
        let base = benchmark_policy_set();
        let mut rules = base.rules.clone();
        rules.push(PolicyRule::deny("deny-everything", "*"));
        let stricter = PolicySet::from_rules(rules).unwrap();
        for node in state.nodes.values() {
            let token = cache.token_for(&node.node_id).unwrap().clone();
            let intent =
                intent_for(ActionType::RestartNode, &token, vec![true_claim(&token)]);
            let (before, _) = evaluate_policy(&intent, &state, &cache, &base);
            let (after, _) = evaluate_policy(&intent, &state, &cache, &stricter);
            assert!(!after, "catch-all deny must deny everything");
            let _ = before;
        }
    }

    #[test]
    fn verdict_wire_form_is_canonical() {
        let state = generate_state(42, 10, 0).unwrap();
        let (view, cache) = project(&state, 7);
        let set = benchmark_policy_set();
        let token = view.entries.keys().next().unwrap().clone();
        let snapshot = crate::state::snapshot_context(&state, &cache, &view, &token).unwrap();
        let intent = parse_intent(&canonical_intent_bytes(&intent_for(
            ActionType::RestartNode,
            &token,
            vec![true_claim(&token)],
        )))
        .unwrap();
        let verdict = evaluate(&intent, &state, &cache, &snapshot, &set);
        assert_eq!(
            canonical::to_canonical_bytes_unchecked(&verdict),
            canonical::to_canonical_bytes(&verdict)
        );
    }
}
