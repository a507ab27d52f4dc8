//! Seeded random streams.
//!
//! Every stream is a ChaCha20 generator (`rand_chacha::ChaCha20Rng`). A
//! replicate's seed is the first `u64` of the ChaCha20 stream
//! `(master_seed, replicate_index)`, so the seed of replicate `i` does not
//! depend on how many replicates run or in which order. Gaussian draws use the
//! ziggurat sampler behind `rand_distr::StandardNormal`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

/// Generator for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed of replicate `index` under `master_seed`.
pub fn replicate_seed(master_seed: u64, index: u64) -> u64 {
    substream(master_seed, index).next_u64()
}

pub fn from_seed(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_are_order_independent() {
        let forward: Vec<u64> = (0..8).map(|i| replicate_seed(42, i)).collect();
        let backward: Vec<u64> = (0..8).rev().map(|i| replicate_seed(42, i)).collect();
        let mut reversed = backward.clone();
        reversed.reverse();
        assert_eq!(forward, reversed);
        let mut sorted = forward.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }
}
