//! Counter-based SplitMix64.
//!
//! Draw number `n` (starting at 0) of stream `seed` is
//!
//! ```text
//! z = seed + (n + 1) * 0x9E3779B97F4A7C15        (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB       (wrapping)
//! out = z ^ (z >> 31)
//! ```
//!
//! which is exactly the sequence a sequential SplitMix64 seeded with `seed`
//! produces. Uniform reals take the top 53 bits: `(out >> 11) * 2^-53`.
//! Because every draw is a pure function of `(seed, n)`, any prefix of a
//! stream is reproducible on its own.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a stream index
/// (layer index, patch index, ...).
#[inline]
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(base ^ mix64(stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Random-access draw `n` of stream `seed`.
    #[inline]
    pub fn draw(seed: u64, n: u64) -> u64 {
        mix64(seed.wrapping_add(n.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let out = Self::draw(self.seed, self.counter);
        self.counter += 1;
        out
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, bound)` (Lemire's widening multiply with rejection).
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(bound);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal via Box-Muller (two uniform draws per value).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
