//! Domain-separated deterministic RNG derivation.
//!
//! All randomness in the artifact flows from a single 64-bit scenario seed
//! through labeled SHA-256 derivations, so independent subsystems (state
//! generation, token minting, workload scheduling, credential minting) draw
//! from non-overlapping, platform-stable streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive a ChaCha20 RNG from `(seed, domain, extra)`.
pub fn derive_rng(seed: u64, domain: &str, extra: &[u8]) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"sal-rng:");
    hasher.update(domain.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(extra);
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// Derivation keyed by a step index, for per-intent streams.
pub fn derive_step_rng(seed: u64, domain: &str, step: u64) -> ChaCha20Rng {
    derive_rng(seed, domain, &step.to_le_bytes())
}
