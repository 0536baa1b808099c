//! Seeded random streams.
//!
//! Every stochastic component receives a `ChaCha8Rng` derived from the run
//! seed and a stream identifier. Streams never share state, so the order in
//! which trees, folds or epochs are processed cannot change the numbers they
//! draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod stream {
    pub const SGD_SHUFFLE: u64 = 1;
    pub const MLP_INIT: u64 = 2;
    pub const MLP_SHUFFLE: u64 = 3;
    pub const CV_FOLDS: u64 = 4;
    pub const SCENE_LAYOUT: u64 = 5;
    pub const SCENE_NOISE: u64 = 6;
    /// Forest trees use `FOREST_BASE + tree_index`.
    pub const FOREST_BASE: u64 = 1 << 32;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
