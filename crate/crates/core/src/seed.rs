//! Labeled seed derivation.
//!
//! Every random stream in the crate (corpus synthesis, parameter init,
//! batching, imposter draws, crops) is derived from one root seed plus a
//! label and a list of indices, so independent consumers never share a stream
//! and resumed runs can re-derive the stream for any epoch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a child seed from `root`, a label, and indices.
pub fn derive(root: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

/// Seeded generator for a labeled stream.
pub fn rng(root: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, label, indices))
}
