//! Counter-based deterministic random streams.
//!
//! An [`RngState`] is a `(seed, counter)` pair. Streams are ChaCha8 keyed by
//! the seed and positioned by the counter, so a state can be saved in a
//! checkpoint and resumed exactly, and independent consumers (dropout layers,
//! augmentation, frame sampling) can each derive their own stream from a
//! parent without caring about evaluation order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// An independent stream identified by `tag`; same parent and tag always
    /// give the same child regardless of the parent's counter.
    pub fn derive(&self, tag: u64) -> RngState {
        let mut keyed = ChaCha8Rng::seed_from_u64(self.seed);
        keyed.set_stream(tag);
        RngState::new(keyed.next_u64())
    }

    pub fn derive_str(&self, tag: &str) -> RngState {
        self.derive(fnv1a(tag.as_bytes()))
    }

    pub fn stream(&self) -> DetRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_word_pos(self.counter as u128);
        DetRng {
            inner,
            seed: self.seed,
        }
    }
}

/// Stable 64-bit FNV-1a, used to turn string ids into stream tags.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// A positioned stream. All integer draws go through `u64` so results do not
/// depend on the platform's pointer width.
#[derive(Debug, Clone)]
pub struct DetRng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl DetRng {
    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            counter: self.inner.get_word_pos() as u64,
        }
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.gen_range(0..n as u64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Approximately standard normal (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `k` distinct indices from `0..n` (partial Fisher-Yates), in draw order.
    pub fn choose_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for DetRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
