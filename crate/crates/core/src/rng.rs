//! Deterministic randomness.
//!
//! All sampling goes through ChaCha8, a counter-based generator whose stream
//! is fixed across platforms. Child seeds are derived by hashing the parent
//! seed with a stream index so that folds, classes and bags each get an
//! independent stream regardless of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type FocusRng = ChaCha8Rng;

/// Stream tags used when deriving child seeds.
pub mod stream {
    pub const FOLD: u64 = 0x464f_4c44;
    pub const SHOTS: u64 = 0x5348_4f54;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const SPLIT: u64 = 0x5350_4c54;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(seed, index)`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn rng_from_seed(seed: u64) -> FocusRng {
    ChaCha8Rng::seed_from_u64(seed)
}
