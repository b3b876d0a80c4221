//! Reproducible random streams.
//!
//! Every parallel unit of work (a Monte Carlo chunk, a replicate) draws from
//! its own ChaCha stream keyed by `(seed, stream)`, so results do not depend
//! on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` samples into fixed-size chunks `(index, len)`.
pub(crate) fn chunks(total: usize, chunk: usize) -> Vec<(u64, usize)> {
    let chunk = chunk.max(1);
    (0..total.div_ceil(chunk)).map(|c| (c as u64, chunk.min(total - c * chunk))).collect()
}
