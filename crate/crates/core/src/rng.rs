//! Deterministic seedable random number generator.
//!
//! The generator is xoshiro256** seeded via splitmix64 expansion of a 64-bit
//! seed, so the same seed yields the same stream on every platform. Gaussian
//! draws go through Box-Muller on top of two uniform draws; the transcendental
//! steps use `libm` so the stream is bit-identical across targets.

use crate::error::{Error, Result};
use alloc::format;

/// One splitmix64 step: returns `(output, next_state)`.
pub fn splitmix64(state: u64) -> (u64, u64) {
    let next = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = next;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31), next)
}

/// Derives an independent sub-seed for stream `index` from a master seed.
///
/// Used by drivers to give initialization, data sampling, evolution, and
/// evaluation their own non-interfering streams.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut state = seed;
    let mut out = 0;
    for _ in 0..=index {
        let (o, next) = splitmix64(state);
        out = o;
        state = next;
    }
    out
}

/// xoshiro256** generator with deterministic seeding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    state: [u64; 4],
}

impl Rng {
    /// Seeds the 256-bit state by running splitmix64 four times.
    pub fn from_seed(seed: u64) -> Self {
        let mut s = [0u64; 4];
        let mut st = seed;
        for word in &mut s {
            let (out, next) = splitmix64(st);
            *word = out;
            st = next;
        }
        Rng { state: s }
    }

    /// Next raw 64-bit output; advances the state exactly one step.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` using the top 53 bits of one `next_u64`.
    pub fn uniform(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 / DEN
    }

    /// Uniform integer in `[0, n)`. `n` must be nonzero.
    pub fn next_below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }

    /// Gaussian sample with mean 0 and the given variance.
    ///
    /// Always consumes exactly two uniform draws (Box-Muller), so stream
    /// position is predictable regardless of the variance value. Variance 0
    /// returns exactly 0.
    pub fn gaussian(&mut self, variance: f64) -> Result<f64> {
        if variance < 0.0 {
            return Err(Error::Domain(format!(
                "gaussian variance must be >= 0, got {variance}"
            )));
        }
        // 1 - u in (0, 1] keeps the log argument away from zero.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        if variance == 0.0 {
            return Ok(0.0);
        }
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * core::f64::consts::PI * u2;
        Ok(r * libm::cos(theta) * libm::sqrt(variance))
    }
}
