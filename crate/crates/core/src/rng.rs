//! Seed derivation. Every random draw in the pipeline comes from one user
//! seed split into independent per-purpose, per-index ChaCha streams, so
//! parallel work never changes the bytes produced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Initial-condition parameters, indexed by sample.
    Data = 1,
    /// Network weight initialization.
    Init = 2,
    /// Mini-batch shuffling, indexed by epoch.
    Shuffle = 3,
    /// Validation batch selection, indexed by batch.
    EvalBatch = 4,
    /// Random states used by the invariant checks.
    Verify = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream as u64) ^ index)
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
