//! Keyed derivation of per-invocation random streams from one root seed.
//!
//! Each (node, iteration vector, method) gets its own stream, so adding a
//! node to a workflow leaves every other node's randomness untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::iteration::IterationVector;

pub type StreamRng = ChaCha8Rng;

/// Hex key of the stream for one plugin method invocation.
pub fn stream_key(root_seed: u64, node_id: &str, iteration: &IterationVector, method: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"labloom-stream\0");
    h.update(root_seed.to_le_bytes());
    for part in [node_id, &iteration.to_string(), method] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Build the generator for a stream key. Keys that are not 64 hex digits are
/// hashed first, so any string is usable.
pub fn rng_from_key(key: &str) -> StreamRng {
    let mut seed = [0u8; 32];
    match hex::decode(key) {
        Ok(bytes) if bytes.len() == 32 => seed.copy_from_slice(&bytes),
        _ => seed.copy_from_slice(&Sha256::digest(key.as_bytes())),
    }
    ChaCha8Rng::from_seed(seed)
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
