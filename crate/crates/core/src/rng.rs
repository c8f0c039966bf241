//! Seed derivation.
//!
//! Every random stream in a run comes from the single master seed:
//! `derive_seed(master, stream)` mixes the two with SplitMix64, and each
//! consumer seeds its own ChaCha8 generator from the result. The stream ids
//! used by the trainer are listed in [`streams`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const GENERATOR_INIT: u64 = 1;
    pub const DISCRIMINATOR_INIT: u64 = 2;
    pub const TRAINING: u64 = 3;
    /// Epoch `e` shuffles with stream `SHUFFLE_BASE + e`.
    pub const SHUFFLE_BASE: u64 = 1 << 32;
    pub const EVALUATION: u64 = 5;
    pub const PRIOR: u64 = 6;
    pub const DATASET: u64 = 7;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    seeded(derive_seed(master, stream))
}
