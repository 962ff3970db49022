//! Keyed random substreams.
//!
//! Every stochastic draw in a run is addressed by `(seed, concern, slot, a, b)`
//! and computed from a stateless hash of that key, so any single draw can be
//! recomputed in isolation and switching one concern on or off never shifts
//! the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stochastic concern a draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Concern {
    Topology = 1,
    Fading = 2,
    Arrival = 3,
    Access = 4,
    Backoff = 5,
    Sensing = 6,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a full substream key.
#[inline]
pub fn key(seed: u64, concern: Concern, slot: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ (concern as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    h = splitmix(h ^ slot);
    h = splitmix(h ^ a);
    splitmix(h ^ b.wrapping_mul(0xA076_1D64_78BD_642F))
}

/// Uniform draw in `[0, 1)` with 53 bits of resolution.
#[inline]
pub fn uniform(seed: u64, concern: Concern, slot: u64, a: u64, b: u64) -> f64 {
    (key(seed, concern, slot, a, b) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unit-mean exponential draw, i.e. the power gain of a Rayleigh channel.
#[inline]
pub fn unit_exponential(seed: u64, concern: Concern, slot: u64, a: u64, b: u64) -> f64 {
    // 1 - u lies in (0, 1], so the logarithm is finite.
    -(1.0 - uniform(seed, concern, slot, a, b)).ln()
}

/// A full generator for concerns that need a sequence of draws.
pub fn stream(seed: u64, concern: Concern, slot: u64, a: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key(seed, concern, slot, a, 0))
}
