//! SHA-256 helpers shared by digests, cache keys, and the mock's draws.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over several parts, separated by a 0x1f byte so that field
/// boundaries cannot be forged by concatenation.
pub fn sha256_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// Hex-encoded variant of [`sha256_parts`].
pub fn sha256_parts_hex(parts: &[&[u8]]) -> String {
    hex::encode(sha256_parts(parts))
}

/// First eight bytes of a digest as a little-endian u64.
pub fn hash_to_u64(digest: &[u8; 32]) -> u64 {
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Map a digest to a uniform draw in [0, 1) using 53 bits of entropy.
pub fn hash_to_unit(digest: &[u8; 32]) -> f64 {
    (hash_to_u64(digest) >> 11) as f64 / (1u64 << 53) as f64
}
