//! Canonical JSON serialization and SHA-256 hashing.
//!
//! Every persisted or hashed structure in this crate uses one byte-exact
//! encoding: JSON with lexicographically sorted object keys, no insignificant
//! whitespace, UTF-8, and integer-only numerics. `serde_json`'s `Value` keeps
//! objects in a `BTreeMap` (the `preserve_order` feature must stay off), so
//! routing serialization through `Value` yields sorted keys for free.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Serialize any value to canonical JSON bytes (sorted keys, compact).
pub fn to_canonical_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_vec(&v).expect("canonical serialization")
}

/// Fast path for types whose struct fields are declared in lexicographic
/// order and whose maps are `BTreeMap`/`BTreeSet`. Skips the intermediate
/// `Value` tree. Unit tests pin equality with [`to_canonical_bytes`] for
/// every wire type that uses this.
pub fn to_canonical_bytes_unchecked<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("canonical serialization")
}

/// Re-encode parsed JSON canonically.
pub fn value_to_canonical_bytes(value: &Value) -> Vec<u8> {
    serde_json::to_vec(value).expect("canonical serialization")
}

/// True iff `bytes` is exactly the canonical encoding of the JSON document it
/// contains.
pub fn is_canonical_json(bytes: &[u8]) -> bool {
    match serde_json::from_slice::<Value>(bytes) {
        Ok(v) => value_to_canonical_bytes(&v) == bytes,
        Err(_) => false,
    }
}

/// Lowercase hex SHA-256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical-serialize then hash.
pub fn canonical_sha256_hex<T: Serialize>(value: &T) -> String {
    sha256_hex(&to_canonical_bytes(value))
}
