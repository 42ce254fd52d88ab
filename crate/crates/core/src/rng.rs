//! Named random sub-streams.
//!
//! Every random draw in the workbench comes from a ChaCha stream whose seed is
//! derived from one master seed and a label, so adding a new consumer never
//! shifts the numbers seen by an existing one, and per-item streams do not
//! depend on the order (or the thread) in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a 64-bit seed from a master seed and a label path.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Generator for the sub-stream `label` of `master`.
pub fn substream(master: u64, label: &str) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    Rng::from_seed(hasher.finalize().into())
}
