//! Seedable 64-bit random number generator.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood), chosen because the
//! full algorithm fits in a dozen lines and is trivially reproduced in any
//! language, so initializations can be replayed bit-for-bit outside this
//! crate. The update is:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! output = z ^ (z >> 31)
//! ```
//!
//! `next_f64` maps the top 53 bits to `[0, 1)` as `(output >> 11) * 2^-53`.

use crate::element::Element;

/// SplitMix64 stream. Cloning forks the sequence at the current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Derive an independent stream, e.g. one per layer or per purpose.
    /// Advances this stream by one step.
    pub fn fork(&mut self) -> SplitMix64 {
        SplitMix64::new(self.next_u64())
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`. The draw happens in f64 and is narrowed to
    /// `T` afterwards, so f32 and f64 tensors see the same sequence.
    pub fn uniform<T: Element>(&mut self, lo: f64, hi: f64) -> T {
        T::from_f64_c(lo + (hi - lo) * self.next_f64())
    }

    /// Uniform integer in `[0, n)` by rejection-free modulo of the 53-bit
    /// draw; fine for the small `n` used in shuffling and sampling.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_f64() * n as f64) as usize % n
    }

    /// Fisher-Yates shuffle with draws from this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}
