//! Seeded random streams.
//!
//! Every stochastic component owns its own stream derived from the run seed
//! and a fixed tag, so adding draws in one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used by the training loop.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const AGENT: u64 = 2;
    pub const EXPLORE: u64 = 3;
    pub const ENV: u64 = 4;
    pub const REPLAY: u64 = 5;
    pub const DENSITY: u64 = 6;
    pub const EVAL: u64 = 7;
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tag: u64) -> u64 {
    mix64(mix64(base) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream(base: u64, tag: u64) -> Rng {
    seeded(derive_seed(base, tag))
}

/// FNV-1a over the bit patterns of a float slice sequence.
pub fn checksum_f64<'a, I: IntoIterator<Item = &'a [f64]>>(chunks: I) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for x in chunk {
            for b in x.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
    }
    h
}
