//! Sub-seed derivation.
//!
//! Every random stream in the toolkit comes from one base seed. A stream is
//! identified by a path of integer tags (e.g. `[series, restart]`); each tag
//! is folded into the state with a SplitMix64 step, so streams with distinct
//! paths are statistically independent and reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag.wrapping_add(GOLDEN))))
}

pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, path))
}

/// Stream tags used across the crate.
pub mod tags {
    pub const GPR: u64 = 1;
    pub const MLP: u64 = 2;
    pub const SYNTH: u64 = 3;
}
