//! Seed derivation for reproducible sub-streams.
//!
//! Every random choice in the pipeline is driven by a seed derived from the
//! master seed and structural coordinates (class index, item index, purpose
//! tag). Any single item can therefore be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; the standard 64-bit mixing function.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent seed from a master seed and two coordinates.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let s = splitmix64(master ^ a.wrapping_mul(0xa076_1d64_78bd_642f));
    splitmix64(s ^ b.wrapping_mul(0xe703_7ed1_a0b4_28db))
}

/// Counter-based stream for one derived seed.
pub fn stream(master: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, a, b))
}

/// Purpose tags keep sibling streams (plan choices, augmentation, sampling)
/// statistically independent even for equal item coordinates.
pub mod tag {
    pub const PLAN_ITEM: u64 = 1;
    pub const AUGMENT_POSITIVE: u64 = 2;
    pub const AUGMENT_NEGATIVE: u64 = 3;
    pub const VALIDATION_SPLIT: u64 = 4;
    pub const EPOCH: u64 = 5;
    pub const MODEL_INIT: u64 = 6;
}
