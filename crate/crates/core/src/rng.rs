//! Deterministic, splittable random streams.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit base seed with the
//! ChaCha stream id set to the stream index. Two lineages with different
//! indices read disjoint keystreams, so replications can be scheduled on any
//! number of threads without changing their draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    base_seed: u64,
    stream_index: u64,
}

/// Creates the stream identified by `(base_seed, stream_index)`.
pub fn derive_stream(base_seed: u64, stream_index: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream_index);
    RandomStream {
        rng,
        base_seed,
        stream_index,
    }
}

impl RandomStream {
    pub fn lineage(&self) -> (u64, u64) {
        (self.base_seed, self.stream_index)
    }

    /// Child stream `child` of this lineage. The child's base seed is a hash
    /// of the parent lineage, so `(s, i).substream(j)` never collides with a
    /// top-level `(s, k)` stream.
    pub fn substream(&self, child: u64) -> RandomStream {
        let seed = mix64(mix64(self.base_seed ^ 0x6a09_e667_f3bc_c909) ^ self.stream_index);
        derive_stream(seed, child)
    }

    /// Uniform on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn std_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn fill_std_normal(&mut self, out: &mut [f64]) {
        for x in out {
            *x = self.std_normal();
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// `d` independent standard normal coordinates.
pub fn sample_std_normal_vec(stream: &mut RandomStream, d: usize) -> Result<Vec<f64>> {
    if d < 1 {
        return Err(Error::InvalidDimension(d));
    }
    let mut v = vec![0.0; d];
    stream.fill_std_normal(&mut v);
    Ok(v)
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
