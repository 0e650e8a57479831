//! Splittable, counter-based random streams.
//!
//! A stream is addressed by `(seed, id)`. The seed keys a ChaCha8 block
//! function and the id selects its 64-bit stream, so two streams with
//! different ids never share a sequence and the same address always replays
//! the same values. Child streams are derived by hashing the parent id with a
//! child index, which lets stages, noise components and parallel chunks own
//! disjoint sequences without coordination.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Number of voxels filled from one child stream by the parallel fillers.
const FILL_CHUNK: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    id: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        Self { seed, id }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Derive an independent child stream.
    pub fn split(&self, child: u64) -> Self {
        let id = splitmix64(self.id ^ splitmix64(child.wrapping_add(0xA076_1D64_78BD_642F)));
        Self { seed: self.seed, id }
    }

    /// Start drawing from this stream.
    pub fn draws(&self) -> Draws {
        let mut key = [0u8; 32];
        let mut state = self.seed;
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.id);
        Draws { rng }
    }

    /// Fill `out` with i.i.d. `N(0, sd²)` values. Chunk `c` of the buffer is
    /// drawn from `self.split(c)`, so the result does not depend on how many
    /// threads do the work.
    pub fn fill_normal(&self, out: &mut [f32], sd: f64) {
        out.par_chunks_mut(FILL_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let mut d = self.split(c as u64).draws();
                for v in chunk.iter_mut() {
                    *v = (d.normal() * sd) as f32;
                }
            });
    }
}

/// An active generator over one stream.
pub struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    /// `U(lo, hi)`; returns exactly `lo` when the bounds coincide.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Integer draw from the closed interval `[lo, hi]`.
    pub fn uniform_int(&mut self, lo: u64, hi: u64) -> u64 {
        if lo >= hi {
            return lo;
        }
        self.rng.random_range(lo..=hi)
    }

    /// Index draw from `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        self.rng.random_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// True with probability `p` (exactly never for 0, always for 1).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.rng.random::<f64>() < p
    }

    /// Unit vector with uniformly random orientation in `n` dimensions.
    pub fn unit_vector(&mut self, n: usize) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| self.normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    /// `k` distinct indices from `0..n`, in draw order.
    pub fn distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
