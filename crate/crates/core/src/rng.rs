//! Seeded random streams.
//!
//! All randomness goes through ChaCha20 (`rand_chacha::ChaCha20Rng`), a
//! counter-based generator. A run is identified by a 64-bit seed, expanded to
//! the 256-bit ChaCha key with `SeedableRng::seed_from_u64`. Independent
//! sub-streams are obtained by setting the ChaCha stream id, so work can be
//! split (per chunk, per time step, per training step) without the streams
//! overlapping and without the result depending on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha20Rng;

/// Stream ids used by different consumers of one seed.
pub mod streams {
    pub const DRIVERS: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const MIXING: u64 = 3;
    /// Parameter initialization; callers add a small per-network offset.
    pub const INIT: u64 = 1 << 16;
    /// Monte-Carlo chunks, one stream per chunk.
    pub const MC_BASE: u64 = 1 << 32;
    /// Prior rollouts, one stream per rollout.
    pub const PRIOR_SAMPLING: u64 = 1 << 40;
    /// Reparameterization noise during training, one stream per (step, time step).
    pub const TRAIN_BASE: u64 = 1 << 48;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal(rng: &mut Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
}
