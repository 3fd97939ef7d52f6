//! Obfuscation membrane: the projection that strips identity from the true
//! state before the agent sees it, the privileged reverse mapping held inside
//! the control plane, and an empirical estimator for identity leakage.
//!
//! Tokens are drawn from a seeded RNG that never reads identity values, so
//! independence from identity is constructive; the leakage estimator and the
//! substring scrub check it empirically.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use aho_corasick::AhoCorasick;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::rng::derive_rng;
use crate::state::{
    NodeClass, NodeId, NodeRecord, NodeStatus, Region, TelemetryVector, TrueState, Token,
    ALL_REGIONS, TOKEN_ALPHABET, TOKEN_PREFIX, TOKEN_SUFFIX_LEN,
};

/// Structural attributes of one node as shown to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscatedNode {
    pub node_class: NodeClass,
    pub region_alias: String,
    pub status: NodeStatus,
    pub tags_structural: BTreeSet<String>,
    pub telemetry: TelemetryVector,
}

/// Tokenized, identity-stripped projection of a [`TrueState`]. The only state
/// representation ever exported to the agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObfuscatedState {
    pub edges: BTreeSet<(Token, Token)>,
    pub entries: BTreeMap<Token, ObfuscatedNode>,
    pub epoch: u64,
}

impl ObfuscatedState {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical::to_canonical_bytes_unchecked(self)
    }
}

/// The sovereign mapping key: token/identity bijection plus the region alias
/// map. Immutable after projection; never serialized or exported.
#[derive(Debug, Clone)]
pub struct MappingCache {
    backward: BTreeMap<Token, NodeId>,
    epoch_salt: [u8; 16],
    forward: BTreeMap<NodeId, Token>,
    region_alias_map: BTreeMap<Region, String>,
}

impl MappingCache {
    pub fn token_for(&self, id: &NodeId) -> Option<&Token> {
        self.forward.get(id)
    }

    /// Control-plane-internal reverse lookup; kept off the public surface so
    /// only the executor path can de-obfuscate.
    pub(crate) fn node_id_for(&self, token: &Token) -> Option<&NodeId> {
        self.backward.get(token)
    }

    pub fn region_alias(&self, region: Region) -> &str {
        &self.region_alias_map[&region]
    }

    pub fn epoch_salt(&self) -> &[u8; 16] {
        &self.epoch_salt
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MembraneError {
    #[error("token {0:?} has no mapping in this cache")]
    UnmappedToken(Token),
    #[error("sample_count {0} below the minimum of 100")]
    TooFewSamples(u64),
    #[error("id_alphabet_size {0} outside 2..=64")]
    DegenerateAlphabet(u64),
}

fn random_token(rng: &mut ChaCha20Rng) -> Token {
    let mut suffix = String::with_capacity(TOKEN_SUFFIX_LEN);
    for _ in 0..TOKEN_SUFFIX_LEN {
        let idx = (rng.next_u32() as usize) % TOKEN_ALPHABET.len();
        suffix.push(TOKEN_ALPHABET[idx] as char);
    }
    Token(format!("{TOKEN_PREFIX}{suffix}"))
}

fn render_node(node: &NodeRecord, cache: &MappingCache) -> ObfuscatedNode {
    ObfuscatedNode {
        node_class: node.node_class,
        region_alias: cache.region_alias(node.region).to_string(),
        status: node.status,
        tags_structural: node.tags.clone(),
        telemetry: node.telemetry.clone(),
    }
}

/// Re-render the agent view of `state` under an existing mapping. Used on
/// every feedback step so the agent observes mutations without re-tokenizing.
pub fn render_view(state: &TrueState, cache: &MappingCache) -> ObfuscatedState {
    let entries: BTreeMap<Token, ObfuscatedNode> = state
        .nodes
        .values()
        .map(|node| {
            let token = cache
                .token_for(&node.node_id)
                .expect("every node is mapped")
                .clone();
            (token, render_node(node, cache))
        })
        .collect();
    let edges: BTreeSet<(Token, Token)> = state
        .edges
        .iter()
        .map(|(from, to)| {
            (
                cache.token_for(from).expect("mapped").clone(),
                cache.token_for(to).expect("mapped").clone(),
            )
        })
        .collect();
    ObfuscatedState {
        edges,
        entries,
        epoch: state.epoch,
    }
}

/// Project a true state into its obfuscated view and mint the mapping cache.
///
/// Every node receives a fresh `Node-XXXXXX` token drawn from an RNG seeded
/// by `(rng_seed, epoch_salt)`; collisions re-draw. Structural fields are
/// copied verbatim; regions are aliased through a seeded permutation.
pub fn project(state: &TrueState, rng_seed: u64) -> (ObfuscatedState, MappingCache) {
    let mut salt_rng = derive_rng(rng_seed, "membrane-salt", b"");
    let mut epoch_salt = [0u8; 16];
    salt_rng.fill_bytes(&mut epoch_salt);

    let mut token_rng = derive_rng(rng_seed, "membrane-tokens", &epoch_salt);
    let mut forward: BTreeMap<NodeId, Token> = BTreeMap::new();
    let mut backward: BTreeMap<Token, NodeId> = BTreeMap::new();
    for node_id in state.nodes.keys() {
        let token = loop {
            let candidate = random_token(&mut token_rng);
            if !backward.contains_key(&candidate) {
                break candidate;
            }
        };
        forward.insert(node_id.clone(), token.clone());
        backward.insert(token, node_id.clone());
    }

    let mut alias_rng = derive_rng(rng_seed, "membrane-regions", &epoch_salt);
    let mut order: Vec<Region> = ALL_REGIONS.to_vec();
    // Fisher-Yates with the integer stream, so the alias assignment does not
    // follow the region vocabulary order.
    for i in (1..order.len()).rev() {
        let j = (alias_rng.next_u64() as usize) % (i + 1);
        order.swap(i, j);
    }
    let region_alias_map: BTreeMap<Region, String> = order
        .into_iter()
        .enumerate()
        .map(|(idx, region)| (region, format!("Region-{}", idx + 1)))
        .collect();

    let cache = MappingCache {
        backward,
        epoch_salt,
        forward,
        region_alias_map,
    };
    let view = render_view(state, &cache);
    (view, cache)
}

/// Privileged reverse mapping: token to true node id. Crate-internal; the
/// executor is the only mutation path that consumes it.
pub(crate) fn reconstruct<'c>(
    token: &Token,
    cache: &'c MappingCache,
) -> Result<&'c NodeId, MembraneError> {
    cache
        .node_id_for(token)
        .ok_or_else(|| MembraneError::UnmappedToken(token.clone()))
}

/// Scanner for identity substrings in agent-visible bytes.
///
/// Matches any 4-byte window of any identity field value; a hit on a longer
/// leaked substring always includes a 4-byte window, so scanning 4-grams is
/// complete for the "no substring of length >= 4" invariant.
pub struct IdentityScanner {
    automaton: Option<AhoCorasick>,
}

impl IdentityScanner {
    pub fn new(state: &TrueState) -> Self {
        let mut grams: BTreeSet<Vec<u8>> = BTreeSet::new();
        for node in state.nodes.values() {
            for value in node.identity_values() {
                for w in value.as_bytes().windows(4) {
                    grams.insert(w.to_vec());
                }
            }
        }
        let automaton = if grams.is_empty() {
            None
        } else {
            Some(AhoCorasick::new(grams.iter()).expect("automaton construction"))
        };
        IdentityScanner { automaton }
    }

    /// Number of identity-gram hits in `bytes`. Zero means scrubbed.
    pub fn leak_count(&self, bytes: &[u8]) -> usize {
        match &self.automaton {
            Some(ac) => ac.find_iter(bytes).count(),
            None => 0,
        }
    }

    pub fn first_leak(&self, bytes: &[u8]) -> Option<String> {
        let ac = self.automaton.as_ref()?;
        ac.find(bytes)
            .map(|m| String::from_utf8_lossy(&bytes[m.start()..m.end()]).into_owned())
    }
}

/// Plug-in mutual information (bits) between two discrete symbol streams.
fn plug_in_mi(pairs: &[(usize, usize)]) -> f64 {
    let n = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let mut joint: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut xs: BTreeMap<usize, u64> = BTreeMap::new();
    let mut ys: BTreeMap<usize, u64> = BTreeMap::new();
    for &(x, y) in pairs {
        *joint.entry((x, y)).or_insert(0) += 1;
        *xs.entry(x).or_insert(0) += 1;
        *ys.entry(y).or_insert(0) += 1;
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let p_xy = c as f64 / n;
        let p_x = xs[&x] as f64 / n;
        let p_y = ys[&y] as f64 / n;
        mi += p_xy * (p_xy / (p_x * p_y)).log2();
    }
    mi.max(0.0)
}

fn identity_symbol_state(symbol: usize) -> TrueState {
    // One-node state whose identity fields are a pure function of the symbol.
    let node_id = NodeId(format!("i-sym{symbol}"));
    let record = NodeRecord {
        account_id: format!("acct-sym{symbol}"),
        dns_name: format!("host-sym{symbol}.sal.internal"),
        ip_address: format!("10.0.0.{}", 1 + symbol % 250),
        node_class: NodeClass::Compute,
        node_id: node_id.clone(),
        region: Region::EuCentral1,
        status: NodeStatus::Running,
        tags: BTreeSet::new(),
        telemetry: TelemetryVector::nominal(),
    };
    TrueState {
        edges: BTreeSet::new(),
        epoch: 0,
        nodes: [(node_id, record)].into_iter().collect(),
    }
}

fn token_symbol(token: &Token) -> usize {
    let b = token.as_str().as_bytes()[TOKEN_PREFIX.len()];
    TOKEN_ALPHABET
        .iter()
        .position(|&c| c == b)
        .expect("token alphabet")
}

fn leakage_estimate<F>(
    sample_count: u64,
    id_alphabet_size: u64,
    rng_seed: u64,
    projector: F,
) -> Result<f64, MembraneError>
where
    F: Fn(&TrueState, u64, usize) -> Token,
{
    if sample_count < 100 {
        return Err(MembraneError::TooFewSamples(sample_count));
    }
    if !(2..=64).contains(&id_alphabet_size) {
        return Err(MembraneError::DegenerateAlphabet(id_alphabet_size));
    }
    let mut symbol_rng = derive_rng(rng_seed, "mi-symbols", b"");
    let mut pairs = Vec::with_capacity(sample_count as usize);
    for sample in 0..sample_count {
        let x = (symbol_rng.next_u64() % id_alphabet_size) as usize;
        let state = identity_symbol_state(x);
        let token = projector(&state, rng_seed.wrapping_add(sample + 1), x);
        pairs.push((x, token_symbol(&token)));
    }
    Ok(plug_in_mi(&pairs))
}

/// Empirical identity-leakage estimate for the real membrane.
///
/// Draws `sample_count` single-node states whose identity fields are sampled
/// uniformly from a discrete alphabet, projects each with a fresh seed, and
/// returns the plug-in mutual information (bits) between the identity symbol
/// and the leading token symbol. Tokens never read identity, so the estimate
/// converges toward zero up to plug-in bias of roughly
/// `|X| * 32 / (2 * N * ln 2)` bits.
pub fn estimate_identity_leakage(
    sample_count: u64,
    id_alphabet_size: u64,
    rng_seed: u64,
) -> Result<f64, MembraneError> {
    leakage_estimate(sample_count, id_alphabet_size, rng_seed, |state, seed, _| {
        let (_, cache) = project(state, seed);
        let id = state.nodes.keys().next().expect("one node");
        cache.token_for(id).expect("mapped").clone()
    })
}

/// Same estimator run against a deliberately broken membrane whose tokens
/// embed the identity symbol in their first character. Exists to show that
/// the estimator detects real leaks; expected to report close to
/// `log2(id_alphabet_size)` bits.
pub fn estimate_identity_leakage_leaky(
    sample_count: u64,
    id_alphabet_size: u64,
    rng_seed: u64,
) -> Result<f64, MembraneError> {
    leakage_estimate(
        sample_count,
        id_alphabet_size,
        rng_seed,
        |_state, seed, symbol| {
            let mut rng = derive_rng(seed, "leaky-tokens", b"");
            let mut token = random_token(&mut rng).0;
            let leak = TOKEN_ALPHABET[symbol % TOKEN_ALPHABET.len()] as char;
            token.replace_range(
                TOKEN_PREFIX.len()..TOKEN_PREFIX.len() + 1,
                &leak.to_string(),
            );
            Token(token)
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::generate_state;

    #[test]
    fn empty_state_projects_to_empty_view() {
        let state = TrueState {
            edges: BTreeSet::new(),
            epoch: 0,
            nodes: BTreeMap::new(),
        };
        let (view, cache) = project(&state, 1);
        assert!(view.entries.is_empty());
        assert!(view.edges.is_empty());
        assert!(cache.is_empty());
    }

    #[test]
    fn projection_is_a_bijection() {
        let state = generate_state(42, 100, 30_000).unwrap();
        let (view, cache) = project(&state, 7);
        assert_eq!(view.entries.len(), state.nodes.len());
        for id in state.nodes.keys() {
            let token = cache.token_for(id).unwrap();
            assert_eq!(reconstruct(token, &cache).unwrap(), id);
            assert!(Token::is_well_formed(token.as_str()));
        }
    }

    #[test]
    fn topology_is_preserved() {
        let state = generate_state(42, 40, 80_000).unwrap();
        let (view, cache) = project(&state, 7);
        let mapped: BTreeSet<(Token, Token)> = state
            .edges
            .iter()
            .map(|(a, b)| {
                (
                    cache.token_for(a).unwrap().clone(),
                    cache.token_for(b).unwrap().clone(),
                )
            })
            .collect();
        assert_eq!(view.edges, mapped);
    }

    #[test]
    fn view_is_scrubbed_of_identity_substrings() {
        let state = generate_state(42, 100, 50_000).unwrap();
        let scanner = IdentityScanner::new(&state);
        let (view, _) = project(&state, 7);
        let bytes = view.to_canonical_bytes();
        assert_eq!(scanner.leak_count(&bytes), 0, "leak: {:?}", scanner.first_leak(&bytes));
        assert_eq!(bytes, canonical::to_canonical_bytes(&view));
    }

    #[test]
    fn scanner_catches_planted_identity() {
        let state = generate_state(42, 10, 0).unwrap();
        let scanner = IdentityScanner::new(&state);
        let (view, cache) = project(&state, 7);
        let mut poisoned = view.clone();
        let id = state.nodes.keys().next().unwrap();
        let token = cache.token_for(id).unwrap();
        poisoned
            .entries
            .get_mut(token)
            .unwrap()
            .tags_structural
            .insert(format!("leak={}", id.as_str()));
        assert!(scanner.leak_count(&poisoned.to_canonical_bytes()) > 0);
    }

    #[test]
    fn different_seeds_same_structure_fresh_tokens() {
        let state = generate_state(42, 50, 40_000).unwrap();
        let (view_a, _) = project(&state, 1);
        let (view_b, _) = project(&state, 2);
        // Structural content modulo the seeded naming: per-node attributes
        // with the alias stripped, plus the sizes of the alias groups.
        let structural = |v: &ObfuscatedState| {
            let mut nodes: Vec<Vec<u8>> = v
                .entries
                .values()
                .map(|n| {
                    let mut bare = n.clone();
                    bare.region_alias = String::new();
                    canonical::to_canonical_bytes(&bare)
                })
                .collect();
            nodes.sort();
            let mut group_sizes: BTreeMap<&str, usize> = BTreeMap::new();
            for n in v.entries.values() {
                *group_sizes.entry(n.region_alias.as_str()).or_insert(0) += 1;
            }
            let mut sizes: Vec<usize> = group_sizes.into_values().collect();
            sizes.sort_unstable();
            (nodes, sizes, v.edges.len())
        };
        assert_eq!(structural(&view_a), structural(&view_b));
        let tokens_a: BTreeSet<&Token> = view_a.entries.keys().collect();
        let tokens_b: BTreeSet<&Token> = view_b.entries.keys().collect();
        let shared = tokens_a.intersection(&tokens_b).count();
        assert!(shared < 2, "token sets should be essentially disjoint");
    }

    #[test]
    fn cross_epoch_token_is_unmapped() {
        let state = generate_state(42, 20, 0).unwrap();
        let (_, cache_a) = project(&state, 1);
        let (view_b, _) = project(&state, 2);
        let foreign = view_b
            .entries
            .keys()
            .find(|t| cache_a.node_id_for(t).is_none())
            .expect("disjoint tokens");
        assert_eq!(
            reconstruct(foreign, &cache_a),
            Err(MembraneError::UnmappedToken(foreign.clone()))
        );
    }

    #[test]
    fn unknown_token_is_unmapped() {
        let state = generate_state(42, 5, 0).unwrap();
        let (_, cache) = project(&state, 1);
        let bogus = Token("Node-ZZZZZZ".to_string());
        assert!(matches!(
            reconstruct(&bogus, &cache),
            Err(MembraneError::UnmappedToken(_))
        ));
    }

    #[test]
    fn leakage_estimator_validates_inputs() {
        assert_eq!(
            estimate_identity_leakage(10, 2, 1),
            Err(MembraneError::TooFewSamples(10))
        );
        assert_eq!(
            estimate_identity_leakage(100, 1, 1),
            Err(MembraneError::DegenerateAlphabet(1))
        );
        assert_eq!(
            estimate_identity_leakage(100, 65, 1),
            Err(MembraneError::DegenerateAlphabet(65))
        );
    }

    #[test]
    fn leakage_small_sample_is_finite_and_nonnegative() {
        let mi = estimate_identity_leakage(100, 2, 1).unwrap();
        assert!(mi.is_finite());
        assert!(mi >= 0.0);
    }

    #[test]
    fn real_membrane_leaks_nothing_measurable() {
        let mi = estimate_identity_leakage(10_000, 2, 42).unwrap();
        assert!(mi <= 0.05, "mi = {mi}");
    }

    #[test]
    fn leaky_fixture_is_detected() {
        let mi = estimate_identity_leakage_leaky(10_000, 2, 42).unwrap();
        assert!(mi >= 0.9, "mi = {mi}");
    }
}
