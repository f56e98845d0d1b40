//! Seeded random streams.
//!
//! Every run owns four independent ChaCha streams so that agent modes which
//! draw different amounts of randomness in one place never shift the draws
//! seen elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer, used to spread a base seed over derived streams.
pub fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub env: u64,
    pub learner: u64,
    pub advisor: u64,
    pub ppr: u64,
}

impl SeedSet {
    pub fn from_base(base: u64) -> Self {
        Self {
            env: mix_seed(base, 1),
            learner: mix_seed(base, 2),
            advisor: mix_seed(base, 3),
            ppr: mix_seed(base, 4),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RngSet {
    /// Episode reset seeds.
    pub env: StreamRng,
    /// Weight init, replay sampling, exploration coin and random actions.
    pub learner: StreamRng,
    pub advisor: StreamRng,
    pub ppr: StreamRng,
}

impl RngSet {
    pub fn new(seeds: SeedSet) -> Self {
        Self {
            env: StreamRng::seed_from_u64(seeds.env),
            learner: StreamRng::seed_from_u64(seeds.learner),
            advisor: StreamRng::seed_from_u64(seeds.advisor),
            ppr: StreamRng::seed_from_u64(seeds.ppr),
        }
    }
}
