//! Seeded random sources.
//!
//! Every random draw in training comes from a ChaCha stream keyed by
//! `(master seed, purpose, index)`, so batch `i` is a pure function of the
//! master seed and a resumed run replays the same draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRandomSource = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Batch = 1,
    Noise = 2,
    Pairing = 3,
    Init = 4,
    Split = 5,
}

pub fn seeded(seed: u64) -> SeededRandomSource {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, purpose, index)`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> SeededRandomSource {
    let key = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((purpose as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
