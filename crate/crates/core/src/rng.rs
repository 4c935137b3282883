//! Deterministic seed derivation. Every random stream in a run is derived
//! from one root seed and a path of integer tags.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used when splitting the root seed.
pub mod stream {
    pub const TRAIN_DATA: u64 = 1;
    pub const EVAL_DATA: u64 = 2;
    pub const MODEL_INIT: u64 = 3;
    pub const STEP: u64 = 4;
    pub const CLASS_ORDER: u64 = 5;
    pub const VAL_SPLIT: u64 = 6;
    pub const HEAD_INIT: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const FISHER: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `root`, producing an independent 64-bit seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(root: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tags))
}
