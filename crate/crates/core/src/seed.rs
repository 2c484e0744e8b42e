//! Seed derivation. Child seeds are the first eight bytes of
//! SHA-256(parent ‖ label), so they are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}

pub fn derive_index(parent: u64, label: &str, index: u64) -> u64 {
    derive(parent, &format!("{label}#{index}"))
}

/// Seed for replica `index` of a run. Independent of condition, so the same
/// index draws the same personas under every condition.
pub fn replica(master: u64, index: u64) -> u64 {
    derive_index(master, "replica", index)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
