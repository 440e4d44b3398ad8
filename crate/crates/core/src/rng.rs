//! Counter-keyed random streams.
//!
//! Every random draw in a run is taken from a generator keyed by
//! `(root seed, purpose, counter, index)`. Two runs that agree on the key
//! agree on the stream, no matter what was drawn before, which is what makes
//! resumed training and per-chain sampling reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator type used throughout the crate.
pub type Rng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    TrainStep = 2,
    Sample = 3,
    Latents = 4,
    Data = 5,
    KMeans = 6,
    Probe = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent generator for `(root, purpose, counter, index)`.
pub fn stream(root: u64, purpose: Purpose, counter: u64, index: u64) -> Rng {
    let mut h = splitmix64(root);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ counter);
    h = splitmix64(h ^ index);
    ChaCha8Rng::seed_from_u64(h)
}
