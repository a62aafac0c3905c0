//! Counter-based random streams.
//!
//! Every random decision in a run is addressed by a key (seed, domain,
//! iteration, lane). The key selects a ChaCha8 keystream: the seed, domain
//! and iteration form the cipher key, the lane is the stream id. Draws for
//! different keys never share state, so results do not depend on the order
//! in which rounds, blocks or runs are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates unrelated consumers of randomness that share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ReduceScatter = 1,
    AllGather = 2,
    Owners = 3,
    GradientNoise = 4,
    TaskSetup = 5,
    Traffic = 6,
    Sampling = 7,
}

/// Builds the generator for one key.
pub fn stream(seed: u64, domain: Domain, iteration: u64, lane: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&iteration.to_le_bytes());
    key[24..32].copy_from_slice(b"rps-lab\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(lane);
    rng
}

/// Packs two small indices into one stream id.
pub fn lane(a: usize, b: usize) -> u64 {
    ((a as u64) << 32) | (b as u64 & 0xffff_ffff)
}
