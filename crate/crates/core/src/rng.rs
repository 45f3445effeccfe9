//! Deterministic random streams.
//!
//! Every stochastic choice (view augmentation, synthetic sample noise, batch
//! order, initialization) draws from a ChaCha stream keyed by a tuple of
//! integers, so results do not depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed with a list of stream coordinates into a single 64-bit key.
pub fn derive_seed(seed: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(splitmix(seed), |acc, &c| splitmix(acc ^ splitmix(c)))
}

pub fn stream(seed: u64, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, coords))
}

/// Stream tags keep the different consumers of a seed apart.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const VIEWS: u64 = 3;
    pub const SYNTH_CLASS: u64 = 4;
    pub const SYNTH_SAMPLE: u64 = 5;
    pub const FINETUNE_SHUFFLE: u64 = 6;
    pub const FINETUNE_VIEWS: u64 = 7;
    pub const SUBSAMPLE: u64 = 8;
}
