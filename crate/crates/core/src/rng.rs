//! Seeded random streams. Every random draw in a run comes from one of these,
//! keyed by the run seed and a fixed stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Weight initialization.
pub const INIT_STREAM: u64 = 0;
/// Default stream for the epoch-end hook.
pub const HOOK_STREAM: u64 = 1;
/// Dataset synthesis.
pub const DATA_STREAM: u64 = 2;
/// Epoch `e` shuffles with stream `SHUFFLE_STREAM_BASE + e`.
pub const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, stream: u64) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn shuffle_stream(seed: u64, epoch: usize) -> RunRng {
    stream(seed, SHUFFLE_STREAM_BASE + epoch as u64)
}
