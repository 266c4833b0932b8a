//! Seed splitting.
//!
//! Every command takes one top-level seed. Sub-seeds are derived by hashing the
//! parent seed together with a stream tag through SplitMix64:
//!
//! ```text
//! derive(seed, tag) = splitmix64(seed ^ splitmix64(tag))
//! ```
//!
//! Tags are small integers or short strings (hashed with FNV-1a first), so the
//! same flag set always yields the same tree of seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` for the numeric stream `tag`.
pub fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag))
}

/// Derives a child seed for a named stream, e.g. `"train"` or `"test"`.
pub fn derive_named(seed: u64, name: &str) -> u64 {
    derive(seed, fnv1a(name.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// The RNG used everywhere in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
