//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded with
//! `split_seed(run_seed, stream_id)`. Stream ids are fixed per purpose
//! (see the `stream` constants), so independent workers can draw from
//! disjoint streams without changing the results of a run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream id bases. A purpose-specific index is added to the base.
pub mod stream {
    pub const WEIGHTS: u64 = 0x0100_0000;
    pub const TRAIN_PATCH: u64 = 0x0200_0000;
    pub const VAL_PATCH: u64 = 0x0300_0000;
    pub const SYNTH_TRAIN: u64 = 0x0400_0000;
    pub const SYNTH_VAL: u64 = 0x0500_0000;
    pub const SYNTH_TEST: u64 = 0x0600_0000;
    pub const TEXTURE: u64 = 0x0700_0000;
    pub const DEFECTS: u64 = 0x0800_0000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of sub-stream `stream` from `seed`.
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, stream: u64) -> Rng {
    seeded(split_seed(seed, stream))
}
