//! Named random substreams derived from one global seed.
//!
//! Every stochastic component asks for its own stream by name, so adding a new
//! component never shifts the numbers an existing one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 64-bit seed for `name` from `global`.
pub fn substream(global: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(global: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(global, name))
}
