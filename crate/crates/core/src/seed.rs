//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic component draws from a ChaCha stream whose seed is a
//! pure function of the run seed and a few integer coordinates (episode,
//! ball, update index, ...). Work can then be split across threads or
//! resumed mid-run without changing any drawn value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams for different purposes apart even when their
/// integer coordinates coincide.
pub mod tag {
    pub const EPISODE: u64 = 0x01;
    pub const MEASURE: u64 = 0x02;
    pub const PF: u64 = 0x03;
    pub const PAE_UPDATE: u64 = 0x04;
    pub const GAN_UPDATE: u64 = 0x05;
    pub const INIT: u64 = 0x06;
    pub const SCHEDULE: u64 = 0x07;
    pub const SAMPLE: u64 = 0x08;
    pub const BANK: u64 = 0x09;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag and an index into a new 64-bit seed.
pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index)
}

pub fn rng_for(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, tag, index))
}
