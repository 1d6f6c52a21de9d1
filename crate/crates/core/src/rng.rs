//! Deterministic RNG substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by the
//! run seed plus a purpose tag, with the prompt id selecting the stream. Work
//! on different prompts therefore never shares a generator and can run in any
//! order or on any number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags; one per consumer of randomness.
pub mod tag {
    pub const ENV: u64 = 1;
    pub const REFERENCE: u64 = 2;
    pub const OFFLINE: u64 = 3;
    pub const SAMPLE: u64 = 4;
    pub const ALPHA: u64 = 5;
    pub const MIX: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const ORACLE: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds the seed and any number of tags into one 64-bit key.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Generator for `(seed, tags)` on stream `stream` (usually a prompt id).
pub fn substream(seed: u64, tags: &[u64], stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tags));
    rng.set_stream(stream);
    rng
}
