//! Seeded random streams.
//!
//! Every stochastic component takes an explicit `u64` seed and builds its own
//! ChaCha8 stream, so runs are reproducible across platforms. Sub-streams are
//! derived with SplitMix64 so unrelated consumers of one seed never share
//! draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministically mixes `seed` with a stream tag.
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags used across the crate.
pub mod stream {
    pub const INIT_ENCODER: u64 = 1;
    pub const INIT_CLASSIFIER: u64 = 2;
    pub const INIT_ABMIL: u64 = 3;
    pub const BATCHES: u64 = 10;
    pub const DATA: u64 = 20;
    pub const SPLIT: u64 = 21;
    pub const IMBALANCE: u64 = 22;
    pub const BAGS: u64 = 23;
    pub const BENCHMARK: u64 = 24;
    pub const GRADCHECK: u64 = 30;
}
