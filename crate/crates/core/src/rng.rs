//! Seeded, reproducible randomness.
//!
//! Draw-order contract: a stream is a ChaCha20 generator keyed by a 64-bit
//! seed. Standard normals come from `rand_distr::StandardNormal` and uniforms
//! from the `[0, 1)` `f64` sampler, one generator call sequence per draw, in
//! the order the caller requests them. Algorithms never share a stream across
//! logical units; they derive substreams by counter (`substream(step)`), so
//! adding or removing draws in one unit never shifts the draws of another.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::state::StateVec;

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha20Rng,
}

/// SplitMix64 finalizer; decorrelates nearby (seed, counter) pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this stream's seed and `id`.
    /// Does not consume draws from `self`.
    pub fn substream(&self, id: u64) -> RandomStream {
        RandomStream::new(mix(self.seed ^ mix(id)))
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_vec(&mut self, dim: usize) -> StateVec {
        StateVec::new((0..dim).map(|_| self.normal()).collect())
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}
