//! True infrastructure state, telemetry, context snapshots, and the
//! deterministic transition function.
//!
//! The node schema deliberately splits identity-sensitive fields (`node_id`,
//! `ip_address`, `dns_name`, `account_id`) from structural attributes (class,
//! region, tags, status, telemetry). Everything downstream relies on that
//! partition: the membrane strips the former and preserves the latter.
//!
//! All numerics are fixed-point integers (milli-units); hashed structures
//! must be bit-exact across platforms, so floats never appear here.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::executor::ExecutedAction;
use crate::intent::{ActionType, ParamValue};
use crate::membrane::{MappingCache, ObfuscatedState};
use crate::rng::derive_rng;

/// Opaque unique node identifier (identity-sensitive).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Ephemeral agent-facing node token, shape `Node-` + 6 base32 characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub String);

/// Alphabet for the random token suffix (RFC 4648 base32).
pub const TOKEN_ALPHABET: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";
pub const TOKEN_PREFIX: &str = "Node-";
pub const TOKEN_SUFFIX_LEN: usize = 6;

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Syntactic validity: `Node-` followed by exactly six base32 characters.
    pub fn is_well_formed(s: &str) -> bool {
        match s.strip_prefix(TOKEN_PREFIX) {
            Some(suffix) => {
                suffix.len() == TOKEN_SUFFIX_LEN
                    && suffix.bytes().all(|b| TOKEN_ALPHABET.contains(&b))
            }
            None => false,
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeClass {
    Compute,
    Database,
    Network,
    Storage,
}

pub const ALL_CLASSES: [NodeClass; 4] = [
    NodeClass::Compute,
    NodeClass::Database,
    NodeClass::Network,
    NodeClass::Storage,
];

impl NodeClass {
    pub fn wire_name(self) -> &'static str {
        match self {
            NodeClass::Compute => "COMPUTE",
            NodeClass::Database => "DATABASE",
            NodeClass::Network => "NETWORK",
            NodeClass::Storage => "STORAGE",
        }
    }
}

/// Closed region vocabulary. Variant order matches the lexicographic order of
/// the wire labels so `BTreeMap<Region, _>` keys serialize sorted.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Region {
    #[serde(rename = "ap-northeast-2")]
    ApNortheast2,
    #[serde(rename = "ap-south-1")]
    ApSouth1,
    #[serde(rename = "eu-central-1")]
    EuCentral1,
    #[serde(rename = "eu-west-2")]
    EuWest2,
    #[serde(rename = "us-east-1")]
    UsEast1,
    #[serde(rename = "us-west-2")]
    UsWest2,
}

pub const ALL_REGIONS: [Region; 6] = [
    Region::ApNortheast2,
    Region::ApSouth1,
    Region::EuCentral1,
    Region::EuWest2,
    Region::UsEast1,
    Region::UsWest2,
];

impl Region {
    /// Coarse geography group, surfaced to the agent as a structural tag.
    pub fn geo(self) -> &'static str {
        match self {
            Region::ApNortheast2 | Region::ApSouth1 => "ap",
            Region::EuCentral1 | Region::EuWest2 => "eu",
            Region::UsEast1 | Region::UsWest2 => "us",
        }
    }

    pub fn wire_label(self) -> &'static str {
        match self {
            Region::ApNortheast2 => "ap-northeast-2",
            Region::ApSouth1 => "ap-south-1",
            Region::EuCentral1 => "eu-central-1",
            Region::EuWest2 => "eu-west-2",
            Region::UsEast1 => "us-east-1",
            Region::UsWest2 => "us-west-2",
        }
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeStatus {
    Running,
    Stopped,
    Terminated,
}

impl NodeStatus {
    pub fn wire_name(self) -> &'static str {
        match self {
            NodeStatus::Running => "RUNNING",
            NodeStatus::Stopped => "STOPPED",
            NodeStatus::Terminated => "TERMINATED",
        }
    }
}

/// Telemetry metric identifiers. Variant order matches the lexicographic
/// order of the wire labels.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricId {
    CpuPct,
    MemPct,
    NetMbps,
    TempC,
}

pub const ALL_METRICS: [MetricId; 4] = [
    MetricId::CpuPct,
    MetricId::MemPct,
    MetricId::NetMbps,
    MetricId::TempC,
];

impl MetricId {
    /// Upper bound of the metric's valid milli-unit range.
    pub fn max_milli(self) -> i64 {
        match self {
            MetricId::CpuPct | MetricId::MemPct => 100_000,
            MetricId::TempC => 150_000,
            MetricId::NetMbps => 1_000_000_000,
        }
    }
}

/// Nominal telemetry: 15% CPU, 30% memory, 45 degrees C, 100 Mbps.
pub const NOMINAL_CPU_PCT: i64 = 15_000;
pub const NOMINAL_MEM_PCT: i64 = 30_000;
pub const NOMINAL_TEMP_C: i64 = 45_000;
pub const NOMINAL_NET_MBPS: i64 = 100_000;

/// Current telemetry vector: metric id to fixed-point milli-unit value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TelemetryVector(pub BTreeMap<MetricId, i64>);

impl TelemetryVector {
    pub fn nominal() -> Self {
        TelemetryVector(
            [
                (MetricId::CpuPct, NOMINAL_CPU_PCT),
                (MetricId::MemPct, NOMINAL_MEM_PCT),
                (MetricId::NetMbps, NOMINAL_NET_MBPS),
                (MetricId::TempC, NOMINAL_TEMP_C),
            ]
            .into_iter()
            .collect(),
        )
    }

    pub fn get(&self, metric: MetricId) -> Option<i64> {
        self.0.get(&metric).copied()
    }

    pub fn validate(&self) -> Result<(), StateError> {
        for metric in ALL_METRICS {
            let v = self
                .0
                .get(&metric)
                .ok_or(StateError::IncompleteTelemetry(metric))?;
            if *v < 0 {
                return Err(StateError::TelemetryOutOfRange(metric, *v));
            }
            if matches!(metric, MetricId::CpuPct | MetricId::MemPct) && *v > 100_000 {
                return Err(StateError::TelemetryOutOfRange(metric, *v));
            }
        }
        Ok(())
    }
}

/// One node of the simulated infrastructure.
///
/// Field declaration order is lexicographic; together with `BTreeMap`/`BTreeSet`
/// containers this makes plain `serde_json` output canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub account_id: String,
    pub dns_name: String,
    pub ip_address: String,
    pub node_class: NodeClass,
    pub node_id: NodeId,
    pub region: Region,
    pub status: NodeStatus,
    pub tags: BTreeSet<String>,
    pub telemetry: TelemetryVector,
}

impl NodeRecord {
    /// The four identity-sensitive field values.
    pub fn identity_values(&self) -> [&str; 4] {
        [
            self.node_id.as_str(),
            &self.ip_address,
            &self.dns_name,
            &self.account_id,
        ]
    }

    pub fn tag_value(&self, key: &str) -> Option<&str> {
        let prefix = format!("{key}=");
        self.tags
            .iter()
            .find_map(|t| t.strip_prefix(prefix.as_str()))
    }
}

/// Full simulated infrastructure graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrueState {
    pub edges: BTreeSet<(NodeId, NodeId)>,
    pub epoch: u64,
    pub nodes: BTreeMap<NodeId, NodeRecord>,
}

impl TrueState {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes_unchecked(self)
    }

    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Self, StateError> {
        let state: TrueState =
            serde_json::from_slice(bytes).map_err(|e| StateError::Decode(e.to_string()))?;
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), StateError> {
        for (id, node) in &self.nodes {
            if id != &node.node_id {
                return Err(StateError::InconsistentNodeKey(id.clone()));
            }
            node.telemetry.validate()?;
        }
        for (from, to) in &self.edges {
            if !self.nodes.contains_key(from) || !self.nodes.contains_key(to) {
                return Err(StateError::DanglingEdge(from.clone(), to.clone()));
            }
        }
        Ok(())
    }

    pub fn terminated_ids(&self) -> BTreeSet<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.status == NodeStatus::Terminated)
            .map(|n| n.node_id.clone())
            .collect()
    }
}

/// Global aggregate counts consulted by blast-radius policy checks. Stored in
/// every context snapshot so recorded decisions replay without the live state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub class_counts: BTreeMap<NodeClass, u64>,
    pub class_terminated_counts: BTreeMap<NodeClass, u64>,
    pub node_total: u64,
}

pub fn compute_aggregates(state: &TrueState) -> Aggregates {
    let mut class_counts: BTreeMap<NodeClass, u64> =
        ALL_CLASSES.iter().map(|c| (*c, 0)).collect();
    let mut class_terminated_counts = class_counts.clone();
    for node in state.nodes.values() {
        *class_counts.entry(node.node_class).or_insert(0) += 1;
        if node.status == NodeStatus::Terminated {
            *class_terminated_counts.entry(node.node_class).or_insert(0) += 1;
        }
    }
    Aggregates {
        class_counts,
        class_terminated_counts,
        node_total: state.nodes.len() as u64,
    }
}

/// One snapshot row: structural attributes of a node in the evaluated
/// neighborhood, keyed by its agent-facing token. Identity fields are
/// excluded; the true region label is structural and kept so recorded
/// decisions stay replayable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub node_class: NodeClass,
    pub region: Region,
    pub status: NodeStatus,
    pub tags_structural: BTreeSet<String>,
    pub telemetry: TelemetryVector,
    pub token: Token,
}

/// Context consulted during evaluation: the intent's target plus its 1-hop
/// dependency neighborhood, in canonical token order, plus global aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSnapshot {
    pub aggregates: Aggregates,
    pub entries: Vec<SnapshotEntry>,
    pub epoch: u64,
}

impl ContextSnapshot {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes_unchecked(self)
    }

    pub fn entry(&self, token: &Token) -> Option<&SnapshotEntry> {
        self.entries
            .binary_search_by(|e| e.token.cmp(token))
            .ok()
            .map(|i| &self.entries[i])
    }

    /// Snapshot with no resolvable entries, recorded for default-denied
    /// submissions so the ledger stays complete.
    pub fn empty(state: &TrueState) -> Self {
        ContextSnapshot {
            aggregates: compute_aggregates(state),
            entries: Vec::new(),
            epoch: state.epoch,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("node_count must be at least 1")]
    EmptyState,
    #[error("node_count {0} exceeds the generator limit of {MAX_NODE_COUNT}")]
    TooManyNodes(u64),
    #[error("edge_density_ppm {0} exceeds 1000000")]
    EdgeDensityOutOfRange(u64),
    #[error("identity generation exhausted redraw attempts")]
    IdentityGeneration,
    #[error("unknown target node {0:?}")]
    UnknownTarget(NodeId),
    #[error("action targets terminated node {0:?}")]
    TargetTerminated(NodeId),
    #[error("unknown token {0:?}")]
    UnknownToken(Token),
    #[error("route peer {0:?} invalid: {1}")]
    InvalidRoutePeer(NodeId, String),
    #[error("invalid action parameters: {0}")]
    InvalidParameters(String),
    #[error("state and view epochs diverge ({state} vs {view})")]
    EpochMismatch { state: u64, view: u64 },
    #[error("telemetry missing metric {0:?}")]
    IncompleteTelemetry(MetricId),
    #[error("telemetry metric {0:?} out of range: {1}")]
    TelemetryOutOfRange(MetricId, i64),
    #[error("node map key does not match record node_id {0:?}")]
    InconsistentNodeKey(NodeId),
    #[error("edge references missing node ({0:?} -> {1:?})")]
    DanglingEdge(NodeId, NodeId),
    #[error("state decode failed: {0}")]
    Decode(String),
}

pub const MAX_NODE_COUNT: u64 = 10_000;

/// Role values an intent may grant. Closed set: arbitrary strings in agent
/// output would let the agent echo content into agent-visible tags.
pub const ALLOWED_ROLES: [&str; 6] = [
    "backup-operator",
    "deploy-agent",
    "log-reader",
    "metrics-viewer",
    "rotation-runner",
    "snapshot-taker",
];

/// Strings that may appear in agent-visible serializations. Identity values
/// are generated to share no 4-gram with any of these (and to contain no run
/// of four digits), which makes the membrane's substring-scrub invariant hold
/// by construction for every seed.
fn structural_vocabulary() -> Vec<String> {
    let mut vocab: Vec<String> = vec![
        "edges", "entries", "epoch", "node_class", "region_alias", "status",
        "tags_structural", "telemetry", "env=production", "env=staging",
        "criticality=critical", "criticality=normal", "geo=eu", "geo=us", "geo=ap",
        "scale=",
    ]
    .into_iter()
    .map(str::to_string)
    .collect();
    for role in ALLOWED_ROLES {
        vocab.push(format!("role={role}"));
    }
    vocab
}

fn vocabulary_grams() -> BTreeSet<Vec<u8>> {
    let mut grams = BTreeSet::new();
    for word in structural_vocabulary() {
        let bytes = word.as_bytes();
        for w in bytes.windows(4) {
            grams.insert(w.to_vec());
        }
    }
    grams
}

fn has_digit_run(s: &str, len: usize) -> bool {
    let mut run = 0usize;
    for b in s.bytes() {
        if b.is_ascii_digit() {
            run += 1;
            if run >= len {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

fn identity_value_ok(s: &str, grams: &BTreeSet<Vec<u8>>) -> bool {
    if has_digit_run(s, 4) {
        return false;
    }
    s.as_bytes().windows(4).all(|w| !grams.contains(w))
}

fn pick(rng: &mut ChaCha20Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    (rng.next_u64() % n as u64) as usize
}

fn random_lower_hex(rng: &mut ChaCha20Rng, len: usize) -> String {
    const HEX: &[u8] = b"0123456789abcdef";
    (0..len).map(|_| HEX[pick(rng, 16)] as char).collect()
}

fn random_lower_alpha(rng: &mut ChaCha20Rng, len: usize) -> String {
    (0..len).map(|_| (b'a' + pick(rng, 26) as u8) as char).collect()
}

/// Draw until the fully composed identity value clears the rejection rules
/// (boundary grams across the prefix matter, so the check runs on the whole
/// value, not the random block).
fn draw_identity<F: Fn(&mut ChaCha20Rng) -> String>(
    rng: &mut ChaCha20Rng,
    grams: &BTreeSet<Vec<u8>>,
    make: F,
) -> Result<String, StateError> {
    for _ in 0..64 {
        let candidate = make(rng);
        if identity_value_ok(&candidate, grams) {
            return Ok(candidate);
        }
    }
    Err(StateError::IdentityGeneration)
}

/// Round-robin index with an occasional seeded displacement.
fn perturbed_index(rng: &mut ChaCha20Rng, i: usize, n: usize) -> usize {
    let base = i % n;
    if rng.next_u32().is_multiple_of(5) {
        (base + 1 + pick(rng, n - 1)) % n
    } else {
        base
    }
}

/// Generate a fully seed-determined infrastructure state.
///
/// Identity fields come from a seeded RNG; classes, regions, and tags are
/// assigned round-robin with seeded perturbation; telemetry starts nominal.
pub fn generate_state(
    seed: u64,
    node_count: u64,
    edge_density_ppm: u64,
) -> Result<TrueState, StateError> {
    if node_count == 0 {
        return Err(StateError::EmptyState);
    }
    if node_count > MAX_NODE_COUNT {
        return Err(StateError::TooManyNodes(node_count));
    }
    if edge_density_ppm > 1_000_000 {
        return Err(StateError::EdgeDensityOutOfRange(edge_density_ppm));
    }

    let grams = vocabulary_grams();
    let mut id_rng = derive_rng(seed, "state-identity", b"");
    let mut attr_rng = derive_rng(seed, "state-attrs", b"");

    let mut nodes: BTreeMap<NodeId, NodeRecord> = BTreeMap::new();
    let mut ordered_ids: Vec<NodeId> = Vec::with_capacity(node_count as usize);
    for i in 0..node_count as usize {
        let node_id = loop {
            let candidate = NodeId(draw_identity(&mut id_rng, &grams, |r| {
                format!("i-{}", random_lower_hex(r, 12))
            })?);
            if !nodes.contains_key(&candidate) {
                break candidate;
            }
        };
        let ip_address = format!(
            "10.{}.{}.{}",
            pick(&mut id_rng, 254),
            pick(&mut id_rng, 254),
            1 + pick(&mut id_rng, 253)
        );
        let dns_name = draw_identity(&mut id_rng, &grams, |r| {
            format!("host-{}.sal.internal", random_lower_alpha(r, 8))
        })?;
        let account_id = draw_identity(&mut id_rng, &grams, |r| {
            format!("acct-{}", random_lower_alpha(r, 10))
        })?;

        let node_class = ALL_CLASSES[perturbed_index(&mut attr_rng, i, 4)];
        let region = ALL_REGIONS[perturbed_index(&mut attr_rng, i, 6)];
        let env = if perturbed_index(&mut attr_rng, i, 2) == 0 {
            "staging"
        } else {
            "production"
        };
        let criticality = if perturbed_index(&mut attr_rng, i, 4) == 0 {
            "critical"
        } else {
            "normal"
        };
        let status = if attr_rng.next_u32().is_multiple_of(10) {
            NodeStatus::Stopped
        } else {
            NodeStatus::Running
        };

        let tags: BTreeSet<String> = [
            format!("criticality={criticality}"),
            format!("env={env}"),
            format!("geo={}", region.geo()),
        ]
        .into_iter()
        .collect();

        let record = NodeRecord {
            account_id,
            dns_name,
            ip_address,
            node_class,
            node_id: node_id.clone(),
            region,
            status,
            tags,
            telemetry: TelemetryVector::nominal(),
        };
        ordered_ids.push(node_id.clone());
        nodes.insert(node_id, record);
    }

    ordered_ids.sort();
    let mut edge_rng = derive_rng(seed, "state-edges", b"");
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    if edge_density_ppm > 0 {
        for from in &ordered_ids {
            for to in &ordered_ids {
                if from != to && edge_rng.next_u64() % 1_000_000 < edge_density_ppm {
                    edges.insert((from.clone(), to.clone()));
                }
            }
        }
    }

    let state = TrueState {
        edges,
        epoch: 0,
        nodes,
    };
    state.validate()?;
    Ok(state)
}

fn param_str<'a>(
    action: &'a ExecutedAction,
    key: &str,
) -> Result<&'a str, StateError> {
    match action.parameters.get(key) {
        Some(ParamValue::Str(s)) => Ok(s),
        _ => Err(StateError::InvalidParameters(format!(
            "missing string parameter {key}"
        ))),
    }
}

fn param_int(action: &ExecutedAction, key: &str) -> Result<i64, StateError> {
    match action.parameters.get(key) {
        Some(ParamValue::Int(v)) => Ok(*v),
        _ => Err(StateError::InvalidParameters(format!(
            "missing integer parameter {key}"
        ))),
    }
}

/// Apply one executed action, returning the successor state.
///
/// Deterministic; the only mutation is the one implied by the action type,
/// plus an epoch increment. Errors leave the input untouched. Only the
/// executor can construct an [`ExecutedAction`], which keeps this function
/// unreachable from outside the mediated path.
pub(crate) fn apply_action(
    state: &TrueState,
    action: &ExecutedAction,
) -> Result<TrueState, StateError> {
    let target = &action.target_node_id;
    let node = state
        .nodes
        .get(target)
        .ok_or_else(|| StateError::UnknownTarget(target.clone()))?;
    if node.status == NodeStatus::Terminated {
        return Err(StateError::TargetTerminated(target.clone()));
    }

    let mut next = state.clone();
    match action.action_type {
        ActionType::TerminateNode => {
            let n = next.nodes.get_mut(target).expect("target exists");
            n.status = NodeStatus::Terminated;
            next.edges
                .retain(|(from, to)| from != target && to != target);
        }
        ActionType::RestartNode => {
            let n = next.nodes.get_mut(target).expect("target exists");
            n.status = NodeStatus::Running;
            n.telemetry = TelemetryVector::nominal();
        }
        ActionType::ScaleGroup => {
            let replicas = param_int(action, "replicas")?;
            if !(0..=1000).contains(&replicas) {
                return Err(StateError::InvalidParameters(format!(
                    "replicas {replicas} out of range"
                )));
            }
            let n = next.nodes.get_mut(target).expect("target exists");
            n.tags.retain(|t| !t.starts_with("scale="));
            n.tags.insert(format!("scale={replicas}"));
        }
        ActionType::ModifyRoute => {
            let peer = NodeId(param_str(action, "peer_node_id")?.to_string());
            let op = param_str(action, "route_op")?;
            if peer == *target {
                return Err(StateError::InvalidRoutePeer(
                    peer,
                    "self-route".to_string(),
                ));
            }
            let peer_node = next
                .nodes
                .get(&peer)
                .ok_or_else(|| StateError::UnknownTarget(peer.clone()))?;
            let edge = (target.clone(), peer.clone());
            match op {
                "add" => {
                    if peer_node.status == NodeStatus::Terminated {
                        return Err(StateError::InvalidRoutePeer(
                            peer,
                            "peer terminated".to_string(),
                        ));
                    }
                    if !next.edges.insert(edge) {
                        return Err(StateError::InvalidRoutePeer(
                            peer,
                            "edge already present".to_string(),
                        ));
                    }
                }
                "remove" => {
                    if !next.edges.remove(&edge) {
                        return Err(StateError::InvalidRoutePeer(
                            peer,
                            "edge not present".to_string(),
                        ));
                    }
                }
                other => {
                    return Err(StateError::InvalidParameters(format!(
                        "unknown route_op {other}"
                    )))
                }
            }
        }
        ActionType::GrantRole => {
            let role = param_str(action, "role")?;
            if !ALLOWED_ROLES.contains(&role) {
                return Err(StateError::InvalidParameters(format!(
                    "role {role} not allowed"
                )));
            }
            let n = next.nodes.get_mut(target).expect("target exists");
            n.tags.insert(format!("role={role}"));
        }
    }
    next.epoch = state.epoch + 1;
    Ok(next)
}

/// Canonical entry list for `target_id`'s 1-hop dependency neighborhood
/// (both edge directions), sorted by token.
pub(crate) fn neighborhood_entries(
    state: &TrueState,
    cache: &MappingCache,
    target_id: &NodeId,
) -> Result<Vec<SnapshotEntry>, StateError> {
    let mut members: BTreeSet<&NodeId> = BTreeSet::new();
    members.insert(target_id);
    for (from, to) in &state.edges {
        if from == target_id {
            members.insert(to);
        }
        if to == target_id {
            members.insert(from);
        }
    }

    let mut entries: Vec<SnapshotEntry> = members
        .into_iter()
        .map(|id| {
            let node = state.nodes.get(id).expect("edge endpoints exist");
            let token = cache
                .token_for(id)
                .cloned()
                .ok_or_else(|| StateError::UnknownTarget(id.clone()))?;
            Ok(SnapshotEntry {
                node_class: node.node_class,
                region: node.region,
                status: node.status,
                tags_structural: node.tags.clone(),
                telemetry: node.telemetry.clone(),
                token,
            })
        })
        .collect::<Result<_, StateError>>()?;
    entries.sort_by(|a, b| a.token.cmp(&b.token));
    Ok(entries)
}

/// Build the canonical evaluation context for `target_token`: the target plus
/// every 1-hop dependency neighbor, sorted by token, plus global aggregates.
///
/// Pure in all inputs; repeated calls yield byte-identical snapshots. The
/// mapping cache is required because tokens are non-invertible without it.
pub fn snapshot_context(
    state: &TrueState,
    cache: &MappingCache,
    view: &ObfuscatedState,
    target_token: &Token,
) -> Result<ContextSnapshot, StateError> {
    if view.epoch != state.epoch {
        return Err(StateError::EpochMismatch {
            state: state.epoch,
            view: view.epoch,
        });
    }
    if !view.entries.contains_key(target_token) {
        return Err(StateError::UnknownToken(target_token.clone()));
    }
    let target_id = cache
        .node_id_for(target_token)
        .ok_or_else(|| StateError::UnknownToken(target_token.clone()))?;

    Ok(ContextSnapshot {
        aggregates: compute_aggregates(state),
        entries: neighborhood_entries(state, cache, target_id)?,
        epoch: state.epoch,
    })
}
