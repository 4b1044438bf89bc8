//! Seeded random streams.
//!
//! Every stochastic routine takes an owned or borrowed [`SimRng`]. Independent
//! replications draw from disjoint ChaCha streams of one master seed, so a
//! single replication can be regenerated without running the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `index` of the master `seed`.
pub fn stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream index for replication `rep` of experiment component `tag` at list position `slot`.
pub fn stream_index(tag: u16, slot: u16, rep: u32) -> u64 {
    (u64::from(tag) << 48) | (u64::from(slot) << 32) | u64::from(rep)
}
