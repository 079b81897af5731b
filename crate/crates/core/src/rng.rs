//! Seeded RNG streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! 64-bit seed and a stream id, so independent purposes (weight init, epoch
//! shuffles, glue layers, synthetic data) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1 << 63;
pub const STREAM_GLUE: u64 = (1 << 63) + 1;
pub const STREAM_SPLIT: u64 = (1 << 63) + 2;
pub const STREAM_SYNTH: u64 = (1 << 63) + 3;
pub const STREAM_JITTER: u64 = (1 << 63) + 4;

/// Generator for `(seed, stream)`. Epoch shuffles use the epoch index as stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-participant seed: `master XOR k`.
#[inline]
pub fn derive_seed(master: u64, k: usize) -> u64 {
    master ^ (k as u64)
}
