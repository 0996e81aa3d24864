//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by
//! `(seed, domain, key)`; the position inside a stream is the voxel (or row)
//! index. A given draw therefore never depends on how many other streams were
//! consumed or on which worker consumed them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Separates independent uses of the same user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    FieldSample = 1,
    DemonsSample = 2,
    TestMatrix = 3,
    SynthNoise = 4,
    Permutation = 5,
}

fn mix(seed: u64, domain: Domain) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (domain as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: Domain, key: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, domain));
    rng.set_stream(key);
    rng
}

/// Stream key for sample `s`, direction `j`.
pub fn sample_key(sample: u64, direction: usize) -> u64 {
    sample * 3 + direction as u64
}

/// `len` standard normal draws from one keyed stream.
pub fn normals(seed: u64, domain: Domain, key: u64, len: usize) -> Vec<f64> {
    let mut rng = stream(seed, domain, key);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}
