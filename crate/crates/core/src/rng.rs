//! Seeded random streams. Every stochastic call site draws from one of these.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream `stream` of the generator keyed by `seed`. Distinct streams are
/// independent, so per-network draws never depend on scheduling order.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
