//! Deterministic random streams.
//!
//! Every stochastic step of training draws from a generator keyed by
//! `(seed, epoch, doc_id, purpose)`, so results do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// What a derived stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Shuffle = 1,
    Windows = 2,
    Augment = 3,
    Init = 4,
    Preview = 5,
    KMeans = 6,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_seed(seed: u64, epoch: u64, doc_id: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ epoch);
    h = splitmix64(h ^ doc_id);
    splitmix64(h ^ purpose as u64)
}

pub fn derive(seed: u64, epoch: u64, doc_id: u64, purpose: Purpose) -> Rng {
    Rng::seed_from_u64(stream_seed(seed, epoch, doc_id, purpose))
}
