//! Deterministic RNG streams.
//!
//! Every consumer of randomness derives its own named stream from the master
//! seed, so adding or removing draws in one part of a training step never
//! shifts the randomness seen by another part.

use rand_chacha::ChaCha12Rng;
use rand::SeedableRng;

/// splitmix64; used only to fold a stream label into the master seed.
fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

fn label_hash(label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64; // FNV-1a
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A named deterministic stream derived from `seed`.
pub fn stream(seed: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix(seed ^ label_hash(label)))
}
