//! Counter-based deterministic randomness.
//!
//! Every stochastic component draws through a (seed, counter) pair: the seed
//! names a stream, the counter names one event inside it, and identical pairs
//! always produce identical draws. Parallel loops reserve a counter range up
//! front and index into it, so results do not depend on worker count or
//! scheduling. Unrelated components get unrelated streams via [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// A deterministic stream of independent RNGs.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// The RNG for one (seed, counter) event.
    pub fn rng_at(seed: u64, counter: u64) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(counter);
        rng
    }

    /// Consume the next counter value and return its RNG.
    pub fn next_rng(&mut self) -> ChaCha12Rng {
        let rng = Self::rng_at(self.seed, self.counter);
        self.counter += 1;
        rng
    }

    /// Reserve `count` consecutive counter values (for parallel loops) and
    /// return the first; event `i` of the batch uses `rng_at(seed, start + i)`.
    pub fn reserve(&mut self, count: u64) -> u64 {
        let start = self.counter;
        self.counter += count;
        start
    }
}

/// Derive an unrelated child seed from a parent seed and a tag
/// (splitmix64 finalizer; bijective in `seed` for fixed `tag`).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
