//! Seeded random streams.
//!
//! A chain owns one root seed. Each consumer (move selection, proposals,
//! hyperparameter draws, initialisation) gets its own ChaCha stream derived
//! from that seed, so inserting draws in one stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    MoveSelection = 1,
    Proposal = 2,
    Hyper = 3,
    Init = 4,
    Simulation = 5,
}

/// Independent generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Seed for replicate `index` derived from a root seed (SplitMix64 step).
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
