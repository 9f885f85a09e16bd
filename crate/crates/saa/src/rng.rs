//! Seeded RNG threaded through initialization, dropout and data synthesis.
//!
//! One `SaaRng` per run; the same seed reproduces a run bit-exactly.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone)]
pub struct SaaRng {
    inner: ChaCha8Rng,
}

impl SaaRng {
    pub fn from_seed(seed: u64) -> Self {
        SaaRng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent child stream, for components that must not perturb the
    /// parent's draw sequence (e.g. per-utterance synthesis).
    pub fn fork(&mut self, salt: u64) -> Self {
        let s = self.inner.gen::<u64>() ^ salt;
        SaaRng::from_seed(s)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        if std == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std).unwrap().sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen_bool(p)
    }

    pub fn usize_below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Xavier/Glorot uniform draw for a weight of the given fan-in/out.
    pub fn xavier(&mut self, fan_in: usize, fan_out: usize) -> f64 {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(-bound, bound)
    }
}
