//! Named RNG substreams.
//!
//! Every random decision in the pipeline draws from a `ChaCha8Rng` seeded by
//! mixing the master seed with a role name (and optionally an index). Two runs
//! with the same master seed therefore replay the same streams regardless of
//! how much randomness any individual stage consumes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; cheap and stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer; spreads low-entropy inputs over the full word.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for a named substream without constructing the generator.
pub fn substream_seed(master: u64, name: &str) -> u64 {
    mix(master ^ fnv1a(name.as_bytes()))
}

/// A generator for the named substream of `master`.
pub fn substream(master: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, name))
}

/// An indexed substream, e.g. one stream per worker or per controlled user.
pub fn substream_n(master: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(substream_seed(master, name) ^ mix(index)))
}

/// A doubly indexed substream, e.g. (controlled user, sequence position).
pub fn substream_nn(master: u64, name: &str, a: u64, b: u64) -> ChaCha8Rng {
    let base = substream_seed(master, name);
    ChaCha8Rng::seed_from_u64(mix(base ^ mix(a).wrapping_add(mix(b).rotate_left(32))))
}
