//! Seeded random streams.
//!
//! Every randomized step draws from a ChaCha8 stream whose 256-bit key is
//! `SHA-256(seed_le || len_le(part) || part || ...)` over a list of string
//! labels, with the ChaCha stream id set to a caller-supplied index. A
//! master seed therefore fans out into independent, named substreams, e.g.
//! `stream(seed, &["fdw", "hate", "safe"], 0)` or
//! `stream(seed, &["forest", "hate"], tree_index)`.
//!
//! ChaCha is counter-based and its output is specified bit-for-bit, so the
//! same (seed, labels, index) yields the same draws on every platform and
//! regardless of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive the substream for `labels` / `index` under `seed`.
pub fn stream(seed: u64, labels: &[&str], index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// A child seed for `label`, for components configured by a plain `u64`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    use rand::RngCore;
    stream(seed, &["derive", label], 0).next_u64()
}
