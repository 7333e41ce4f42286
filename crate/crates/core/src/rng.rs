//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a
//! master seed, a stream label and a tuple of indices, so results do not
//! depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random streams used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Model instance: signal and noise bases.
    Model = 1,
    Signal = 2,
    UncorrNoise = 3,
    DependencyMatrix = 4,
    Support = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ 0xD1B5_4A32_D192_ED03);
    h = splitmix64(h ^ stream as u64);
    for &i in indices {
        h = splitmix64(h ^ i);
    }
    h
}

pub fn substream(master: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, indices))
}
