use sha2::{Digest, Sha256};

/// Derive a child seed from a base seed, a stream tag, and an index.
///
/// Used wherever a seeded operation fans out (ensemble members, per-epoch
/// shuffles, per-copy jitter draws) so that parallel and sequential execution
/// consume identical random streams.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
