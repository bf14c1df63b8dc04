//! Stable seed derivation.
//!
//! Per-stage and per-client seeds are SHA-256 hashes of the global seed, a
//! stage label and a client id, so adding or reordering stages never shifts
//! the randomness of another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from `(global, stage, client)`.
pub fn derive(global: u64, stage: &str, client: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update((stage.len() as u64).to_le_bytes());
    h.update(stage.as_bytes());
    h.update((client.len() as u64).to_le_bytes());
    h.update(client.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
