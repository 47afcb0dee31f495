//! Seeded, portable random streams.
//!
//! Every consumer of randomness derives its own ChaCha8 stream from the run
//! seed, a purpose tag, and up to three indices (variation, epoch, batch...).
//! Streams never depend on scheduling order, so parallel or resumed work
//! reproduces the same bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags. Values are part of the on-disk reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Render = 1,
    Colorize = 2,
    Init = 3,
    Shuffle = 4,
    Dropout = 5,
    RandomLabels = 6,
    ProbeSplit = 7,
    ProbeInit = 8,
    ProbeShuffle = 9,
    ProbeDropout = 10,
}

pub fn stream(seed: u64, purpose: Stream, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(c);
    rng
}
