//! Seeded, platform-independent randomness.
//!
//! Every random draw in the crate goes through [`RngState`], a ChaCha8 stream
//! keyed by a 64-bit seed. Independent sub-streams are derived by folding a
//! path of integers (run index, sample index, ...) into the parent seed with
//! the SplitMix64 finalizer, so the value drawn for `(seed, run, sample)` never
//! depends on evaluation order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for the sub-stream at `path` below this state's seed.
    /// Does not consume draws from `self`.
    pub fn substream(&self, path: &[u64]) -> RngState {
        RngState::new(derive_seed(self.seed, path))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Underlying generator, for use with `rand_distr` distributions.
    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `seed`; distinct paths give unrelated seeds.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0x6364_6b69_7400_0000);
    for (depth, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        let xs: Vec<f64> = (0..16).map(|_| a.next_f64()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.next_f64()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn substreams_are_distinct_and_stable() {
        let root = RngState::new(7);
        let mut s01 = root.substream(&[0, 1]);
        let mut s10 = root.substream(&[1, 0]);
        let mut s0 = root.substream(&[0]);
        let a = s01.next_u64();
        assert_ne!(a, s10.next_u64());
        assert_ne!(a, s0.next_u64());
        assert_eq!(a, root.substream(&[0, 1]).next_u64());
        assert_eq!(derive_seed(7, &[0, 1]), root.substream(&[0, 1]).seed());
    }

    const PINNED: u64 = 13_080_132_717_333_068_652;

    #[test]
    fn pinned_first_draw() {
        // Guards cross-platform stability of the generator choice.
        let first = RngState::new(0).next_u64();
        assert_eq!(first, PINNED);
        assert_ne!(first, RngState::new(1).next_u64());
    }
}
