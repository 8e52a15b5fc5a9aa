//! Named seed derivation so every random stream is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the bytes of `label`. Stable across platforms and releases.
pub fn stable_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Seed for the stream named `label` under the run seed.
pub fn derive(seed: u64, label: &str) -> u64 {
    seed.wrapping_add(stable_hash(label))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    rng(derive(seed, label))
}
