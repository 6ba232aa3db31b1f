//! Counter-based seed splitting.
//!
//! Every run draws all randomness from one root seed; independent streams are
//! carved out by hashing `(root, domain, counter)` so adding a consumer never
//! perturbs the others.

use sha2::{Digest, Sha256};

/// Derive an independent sub-seed from a root seed.
pub fn derive_seed(root: u64, domain: &str, counter: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(counter.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 8 bytes"))
}
