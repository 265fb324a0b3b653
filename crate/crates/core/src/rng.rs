//! Named, seedable random streams.
//!
//! Every random draw in the crate goes through [`stream`], which keys a
//! ChaCha20 generator on `(seed, tag)`. Two different tags never share a
//! stream, so adding a new consumer does not shift the draws of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

fn digest(seed: u64, tag: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((tag.len() as u64).to_le_bytes());
    hasher.update(tag.as_bytes());
    let out = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&out);
    key
}

/// Independent generator for the `(seed, tag)` pair.
pub fn stream(seed: u64, tag: &str) -> Rng {
    ChaCha20Rng::from_seed(digest(seed, tag))
}

/// Child seed for `(seed, tag)`, used when a config struct carries its own seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let key = digest(seed, tag);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}
