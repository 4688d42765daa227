//! Seed partitioning for reproducible parallel sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of draws handled by one independently seeded batch.
pub const BATCH: usize = 4096;

/// Generator for batch `stream` of the master `seed`.
///
/// Every batch gets its own ChaCha stream, so results do not depend on
/// how batches are scheduled across workers.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `n` draws into `(batch_index, start, len)` triples.
pub fn batches(n: usize) -> Vec<(u64, usize, usize)> {
    (0..n.div_ceil(BATCH))
        .map(|b| {
            let start = b * BATCH;
            (b as u64, start, BATCH.min(n - start))
        })
        .collect()
}
