//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own xoshiro256++ stream so a
//! change in how many numbers one purpose consumes cannot shift another.
//! Streams are seeded through splitmix64 (`SeedableRng::seed_from_u64`).

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Init,
    Dropout,
    Masking,
    Data,
    Gumbel,
    Distractors,
    Synth,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Dropout => 2,
            Purpose::Masking => 3,
            Purpose::Data => 4,
            Purpose::Gumbel => 5,
            Purpose::Distractors => 6,
            Purpose::Synth => 7,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `purpose` under the run seed.
pub fn stream(seed: u64, purpose: Purpose) -> StreamRng {
    StreamRng::seed_from_u64(splitmix64(seed) ^ purpose.tag().wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Stream for item `index` of `purpose` (per-file, per-epoch, ...).
pub fn substream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let base = splitmix64(seed) ^ purpose.tag().wrapping_mul(0xD1B5_4A32_D192_ED03);
    StreamRng::seed_from_u64(splitmix64(base ^ splitmix64(index.wrapping_add(1))))
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
