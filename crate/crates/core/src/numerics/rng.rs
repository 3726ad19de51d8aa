//! Seeded, splittable randomness.
//!
//! Every random decision in the engine draws from a ChaCha stream derived from one
//! 64-bit seed plus a label, so independent consumers never share a stream and
//! adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type EngineRng = ChaCha8Rng;

fn label_hash(label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Stream for `label` under `seed`.
pub fn stream_rng(seed: u64, label: &str) -> EngineRng {
    indexed_rng(seed, label, 0)
}

/// Stream for the `index`-th member of a family of streams (e.g. one per class).
pub fn indexed_rng(seed: u64, label: &str, index: u64) -> EngineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label_hash(label, index));
    rng
}
