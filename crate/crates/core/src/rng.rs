//! Named, order-independent random streams.
//!
//! Every stream is a ChaCha8 generator keyed by SHA-256 of
//! `(seed, replicate, tag)`, so replicate `r` draws the same numbers no
//! matter which thread runs it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, replicate: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(replicate.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
