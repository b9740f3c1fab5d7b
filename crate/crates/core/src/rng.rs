//! Seed derivation. Every stochastic call site gets its own stream derived
//! from stable keys, so results never depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of keys into a single 64-bit seed.
pub fn mix_seed(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x243F_6A88_85A3_08D3, |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(keys))
}

/// Stream tags keep different consumers of the same (seed, cav, frame)
/// triple apart.
pub mod tag {
    pub const SENSE: u64 = 0x5345_4E53;
    pub const QUANTIZE: u64 = 0x5155_414E;
    pub const GENERATE: u64 = 0x4745_4E45;
    pub const KMEANS: u64 = 0x4B4D_4541;
}
