//! Seed splitting. Every pipeline stage draws from its own ChaCha stream of a
//! single root seed, so adding draws in one stage never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers for the pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Simulate = 1,
    NoiseCalibration = 2,
    Threshold = 3,
    Correlate = 4,
    Permutation = 5,
}

/// Generator for `stage` derived from `root`.
pub fn stage_rng(root: u64, stage: Stage) -> ChaCha8Rng {
    stream_rng(root, stage as u64)
}

/// Generator on an arbitrary stream of `root`; stream 0 is the plain seed.
pub fn stream_rng(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

/// Root seed of item `index` (a resonator, a device) under `root`.
pub fn child_seed(root: u64, index: u64) -> u64 {
    use rand::Rng;
    stream_rng(root, (1 << 32) | index).random()
}
