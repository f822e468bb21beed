//! Deterministic, splittable random streams.
//!
//! Every random decision in the pipeline (splits, initialization, shuffling,
//! replay selection) draws from a [`DetRng`] whose position can be captured as
//! an [`RngState`] and stored in a checkpoint. Child streams are derived from a
//! parent seed and a stream label, so concurrent shards never share a stream.

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

/// Seed plus word position inside the ChaCha8 stream for that seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Fresh stream keyed by this state's seed and `stream`. The counter is
    /// not part of the key: deriving from the same seed always yields the same
    /// child, wherever the parent currently is.
    pub fn derive(&self, stream: u64) -> Self {
        Self::new(mix(self.seed ^ mix(stream.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn rng(&self) -> DetRng {
        DetRng::from_state(*self)
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream labels used when deriving child generators.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const SYNTHETIC: u64 = 2;
    pub const SHARD: u64 = 0x100;
    pub const INIT: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const GATING: u64 = 5;
    pub const BASELINE: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct DetRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl DetRng {
    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(state.seed);
        inner.set_word_pos(u128::from(state.counter));
        Self {
            seed: state.seed,
            inner,
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            counter: self.inner.get_word_pos() as u64,
        }
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller). Uses `libm` so streams of normals
    /// are identical on every host.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }
}

impl RngCore for DetRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_stream() {
        let mut a = RngState::new(42).rng();
        let mut b = RngState::new(42).rng();
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn state_roundtrip_resumes_stream() {
        let mut a = RngState::new(9).rng();
        for _ in 0..17 {
            a.next_u32();
        }
        let saved = a.state();
        let expected: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let mut b = saved.rng();
        let got: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(expected, got);
    }

    #[test]
    fn derived_streams_differ() {
        let root = RngState::new(1);
        assert_ne!(root.derive(1), root.derive(2));
        assert_eq!(root.derive(7), root.derive(7));
    }

    #[test]
    fn normal_moments() {
        let mut r = RngState::new(3).rng();
        let n = 20_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }
}
