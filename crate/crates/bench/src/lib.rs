//! Inputs shared by the compression benchmarks.

use focus_core::aggregator::normal_init;
use focus_core::rng::rng_from_seed;
use focus_core::{FeatureBag, Tensor2};

pub const SIZES: [usize; 3] = [10_000, 50_000, 100_000];
pub const DIM: usize = 512;

/// A standard-normal bag of `n` tokens and five prompt rows.
pub fn fixture(n: usize, d: usize, seed: u64) -> (FeatureBag, Tensor2) {
    let mut rng = rng_from_seed(seed);
    let features = normal_init(n, d, 1.0, &mut rng).frozen();
    let prompts = normal_init(5, d, 1.0, &mut rng).frozen();
    let bag = FeatureBag::from_features("bench", features, None).expect("finite features");
    (bag, prompts)
}
