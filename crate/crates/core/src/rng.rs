//! Seeded random streams.
//!
//! A root seed expands into independent named streams. Each stream is a
//! ChaCha8 generator keyed by the root seed and selected by a stream id, so
//! drawing from one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams derived from one root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Poisson inclusion masks for the shared records.
    SharedMask = 1,
    /// Gaussian gradient noise.
    GradientNoise = 2,
    /// Inclusion coin for the extra record in coupled runs.
    ExtraPoint = 3,
    /// Model initialization.
    Init = 4,
    /// Noisy count queries in private quantile search.
    QuantileNoise = 5,
    /// Dataset shuffling and splitting.
    Split = 6,
    /// Synthetic data generation.
    Data = 7,
}

/// Returns the generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Mixes a seed with a salt, for deriving per-cell or per-stage seeds.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
