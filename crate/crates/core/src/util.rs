//! Hashing, seeding and canonical JSON helpers shared by every module.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// RNG used for every simulated episode. ChaCha8 output is specified
/// bit-for-bit, so streams agree across platforms.
pub type EpisodeRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the seed of episode `index` from a master seed:
/// `splitmix64(master ^ splitmix64(index))`.
pub fn mix64(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// RNG stream for episode `index` of a run seeded with `master`.
pub fn episode_rng(master: u64, index: u64) -> EpisodeRng {
    EpisodeRng::seed_from_u64(mix64(master, index))
}

/// Fixed-width lowercase hex rendering of a 64-bit digest.
pub fn hex64(value: u64) -> String {
    format!("{value:016x}")
}

/// Serializes `value` as canonical JSON: object keys sorted, no insignificant
/// whitespace. Relies on `serde_json::Map` being ordered (no `preserve_order`).
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    serde_json::to_string(&v)
}

/// SHA-256 of `bytes`, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
