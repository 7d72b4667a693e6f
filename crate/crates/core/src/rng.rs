//! Portable deterministic random stream.
//!
//! Every random choice in the simulator draws from [`SimRng`], a thin wrapper
//! over PCG32 (PCG-XSH-RR, 64-bit state, 32-bit output) as specified by
//! O'Neill. A 64-bit draw is two consecutive 32-bit outputs, low word first.
//! Seeding is `Pcg32::new(seed, SIM_STREAM)`, so any implementation of the
//! reference PCG32 replays the same stream from a logged seed.

use rand_core::RngCore;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

/// PCG stream selector shared by all simulator RNGs.
pub const SIM_STREAM: u64 = 0x0a02_bdbf_7bb3_c0a7;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimRng(Pcg32);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(Pcg32::new(seed, SIM_STREAM))
    }

    /// Independent stream for a named purpose, derived from `seed`.
    pub fn derived(seed: u64, salt: u64) -> Self {
        SimRng(Pcg32::new(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), SIM_STREAM))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform index in `0..n` from exactly one 64-bit draw (multiply-shift).
    ///
    /// Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index over empty range");
        let x = self.next_u64();
        ((u128::from(x) * n as u128) >> 64) as usize
    }

    /// Uniform in `[0, 1)` with 53 bits of precision, one 64-bit draw.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Deterministic Fisher-Yates shuffle; draws `len - 1` values.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
