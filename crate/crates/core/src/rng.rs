//! Seed derivation. Every random source in a run is a separate stream keyed by
//! (run seed, stream tag, index), so changing one component (e.g. turning
//! NOMA off) never shifts the draws another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Traffic = 2,
    Mac = 3,
    Fading = 4,
    Agent = 5,
    Replay = 6,
    Genetic = 7,
    MonteCarlo = 8,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream as u64)) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

/// Counter-based uniform draw in (0, 1] for a tuple of keys.
pub fn keyed_unit(seed: u64, stream: Stream, keys: &[u64]) -> f64 {
    let mut h = derive_seed(seed, stream, 0);
    for &k in keys {
        h = splitmix64(h ^ k);
    }
    ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}
