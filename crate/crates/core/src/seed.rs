//! Seed derivation.
//!
//! Every stochastic component draws from a [`SimRng`] built from a `u64`.
//! Independent streams (per trial, per sweep cell, per adversary) are split
//! off a base seed with [`derive_seed`], which mixes the base and an index
//! through the SplitMix64 finalizer so that neighbouring indices give
//! unrelated streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function applied to `state + gamma`.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `index` under `base`: `base ^ splitmix64(index)`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    base ^ splitmix64(index)
}

/// Build the simulator RNG from a seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Named stream labels, so call sites do not collide on small integers.
pub mod stream {
    pub const PROTOCOL: u64 = 0x7072_6f74;
    pub const ADVERSARY: u64 = 0x6576_6531;
    pub const FIRMWARE: u64 = 0x6669_726d;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 generator seeded with 0:
        // state advances by gamma before mixing.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(splitmix64(GOLDEN_GAMMA), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn derived_streams_differ() {
        let a: u64 = rng_from_seed(derive_seed(42, 0)).random();
        let b: u64 = rng_from_seed(derive_seed(42, 1)).random();
        assert_ne!(a, b);
        let again: u64 = rng_from_seed(derive_seed(42, 0)).random();
        assert_eq!(a, again);
    }
}
