//! Reproducible random streams.
//!
//! Every replicate gets its own ChaCha8 stream derived from the run seed and
//! the replicate index, so results do not depend on how replicates are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Independent stream for replicate `index` of a run seeded with `seed`.
pub fn replicate_stream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
