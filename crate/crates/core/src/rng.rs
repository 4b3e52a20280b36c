//! Seeded random streams.
//!
//! Every random draw in the crate comes from xoshiro256** seeded through
//! splitmix64 (the `seed_from_u64` expansion of `rand_xoshiro`). Independent
//! per-task streams are derived from a master seed and a stream id, so work
//! split across threads draws the same numbers whatever the schedule.

use rand::{Rng as _, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

pub type Rng = Xoshiro256StarStar;

/// Stream ids at or above this value are reserved for internal draws that
/// must not collide with per-item streams (shuffles, tables, init).
pub const RESERVED_STREAM_BASE: u64 = 1 << 62;

/// The splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Stream `stream_id` of the master seed.
pub fn stream(master: u64, stream_id: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(master) ^ splitmix64(stream_id.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Uniform draw from [0, 1).
pub fn uniform(rng: &mut Rng) -> f64 {
    rng.random::<f64>()
}

/// Uniform index in `0..n`. `n` must be positive.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

pub fn bernoulli(rng: &mut Rng, p: f64) -> bool {
    uniform(rng) < p
}

/// Fisher-Yates shuffle driven by [`below`].
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
