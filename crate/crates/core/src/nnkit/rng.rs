//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, stream_id)` and positioned by a counter,
//! so any draw can be reproduced without replaying unrelated streams. Child
//! streams are derived by hashing an index into the stream id, which makes
//! e.g. the T Monte-Carlo dropout passes independent of execution order.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// splitmix64 finalizer, used to mix indices into stream ids.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    /// Stream positioned after `counter` 64-bit draws.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        // word position counts 32-bit words
        rng.set_word_pos(u128::from(counter) * 2);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit draws consumed so far (rounded up for odd 32-bit draws).
    pub fn counter(&self) -> u64 {
        self.rng.get_word_pos().div_ceil(2) as u64
    }

    /// Independent child stream for `index`; does not advance `self`.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(
            self.seed,
            mix64(self.stream_id ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d))),
        )
    }

    /// Child stream for a `(tag, index)` pair, e.g. `(EPOCH_TAG, epoch)`.
    pub fn derive(&self, tag: u64, index: u64) -> RngStream {
        self.split(tag).split(index)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]` (inclusive).
    pub fn int_in(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + ((self.rng.next_u64() as u128 * span as u128) >> 64) as u64
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
