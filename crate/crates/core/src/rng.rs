//! Seed derivation. Every stochastic draw in the crate is made from a
//! generator keyed by `(master seed, stream, counter)`, so runs are
//! reproducible without threading RNG state through the training loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, counter: u64) -> u64 {
    mix(mix(mix(seed) ^ stream) ^ counter)
}

pub fn stream_rng(seed: u64, stream: u64, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, counter))
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named streams.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const PRETRAIN_NOISE: u64 = 4;
    pub const CLUSTER: u64 = 5;
    pub const GRAD_CHECK: u64 = 6;
}
