//! Named, seeded random streams.
//!
//! Every random draw in the crate comes from a stream identified by
//! `(master_seed, label, counter)`. Streams are stateless to reconstruct,
//! which is what makes checkpoints resumable without storing generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels used by the acquisition pipeline.
pub mod labels {
    pub const CORPUS: &str = "corpus";
    pub const SHAPE_FEATURE: &str = "shape-feature";
    pub const PROPERTY_FEATURE: &str = "property-feature";
    pub const SAMPLING: &str = "sampling";
    pub const GP: &str = "gp";
    pub const METRICS: &str = "metrics";
    pub const DESCRIPTOR: &str = "descriptor";
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Derives the 64-bit seed of stream `label` at position `counter`.
pub fn derive_seed(master: u64, label: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ label_hash(label)) ^ splitmix64(counter.wrapping_add(1)))
}

/// Opens stream `label` at position `counter`.
pub fn stream(master: u64, label: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, label, counter))
}

/// Uniform value in the open interval (0, 1) keyed by `(seed, key)`, for
/// draws that must not depend on iteration order.
pub fn keyed_uniform(seed: u64, key: u64) -> f64 {
    let bits = splitmix64(seed ^ splitmix64(key ^ 0xD6E8_FEB8_6659_FD93)) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}
