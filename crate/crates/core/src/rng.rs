//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed directly by a tuple
//! `(seed, domain, a, b)`. ChaCha is counter based, so a stream depends only
//! on its key and never on how work was scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the streams used by different consumers of one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Dataset = 1,
    MonteCarlo = 2,
    Trial = 3,
    Network = 4,
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
