//! Counter-based 64-bit generator.
//!
//! Every experiment in this crate draws its randomness from [`CounterRng`], so
//! traces are reproducible bit-for-bit on every platform. The algorithm is
//! fixed and must not change without bumping the result-file schema:
//!
//! ```text
//! mix(z)    = z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//!             z ^= z >> 27; z *= 0x94D049BB133111EB;
//!             z ^ (z >> 31)                          (all arithmetic mod 2^64)
//! key       = mix(seed + mix(stream ^ 0x5851F42D4C957F2D))
//! output(c) = mix(key + (c + 1) * 0x9E3779B97F4A7C15)   for c = 0, 1, 2, ...
//! ```
//!
//! `output(c)` depends only on `(seed, stream, c)`, which makes the generator
//! seekable. Distinct streams get unrelated keys, so their Weyl sequences
//! start at effectively random offsets of a 2^64 cycle.
//!
//! Derived quantities:
//! - `next_f64` = `(next_u64 >> 11) * 2^-53`, uniform on `[0, 1)`.
//! - `below(n)` = Lemire's multiply-and-reject, exactly uniform on `0..n`.

use rand_core::RngCore;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const STREAM_SALT: u64 = 0x5851_F42D_4C95_7F2D;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
    stream: u64,
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix64(seed.wrapping_add(mix64(stream ^ STREAM_SALT)));
        CounterRng {
            seed,
            stream,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 64-bit outputs consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Jump to an absolute output position.
    pub fn seek(&mut self, counter: u64) {
        self.counter = counter;
    }

    /// An independent generator for a sub-task, keyed off this one's
    /// `(seed, stream)` and a caller-chosen tag.
    pub fn fork(&self, tag: u64) -> CounterRng {
        CounterRng::new(self.seed ^ mix64(tag.wrapping_add(GOLDEN_GAMMA)), self.stream)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`. Panics if `n == 0`.
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let mut prod = (self.next_u64() as u128) * (n as u128);
        let mut low = prod as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                prod = (self.next_u64() as u128) * (n as u128);
                low = prod as u64;
            }
        }
        (prod >> 64) as usize
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (CounterRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        CounterRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}
