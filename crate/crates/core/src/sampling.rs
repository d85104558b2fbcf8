//! Seeded sampling of domain boxes.
//!
//! All randomized checks in the toolkit draw from a ChaCha stream so that a
//! `(seed, stream)` pair reproduces the exact same points on every platform.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Stream ids keep independent sampling contexts from sharing a sequence.
pub mod streams {
    pub const SYSTEM_VALIDATION: u64 = 1;
    pub const KOOPMAN_VALIDATION: u64 = 2;
    pub const MEASUREMENT_FIT: u64 = 3;
    pub const SYMMETRY: u64 = 4;
    pub const LIE_POINTS: u64 = 5;
    pub const MODEL_IC: u64 = 6;
    pub const HOLDOUT: u64 = 7;
}

/// ChaCha RNG pinned to `(seed, stream)`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `count` points uniformly from the axis-aligned box `bounds`.
pub fn sample_box<T: Scalar>(
    bounds: &[(T, T)],
    count: usize,
    rng: &mut impl Rng,
) -> Vec<Vec<T>> {
    (0..count)
        .map(|_| {
            bounds
                .iter()
                .map(|&(lo, hi)| {
                    let u = T::from_f64(rng.gen::<f64>()).expect("unit sample");
                    lo + (hi - lo) * u
                })
                .collect()
        })
        .collect()
}
