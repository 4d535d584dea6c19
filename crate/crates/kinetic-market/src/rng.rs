//! Deterministic random-number streams.
//!
//! Every stochastic object in a run (each agent, each broker, the
//! fundamental-price process, initial-condition sampling) draws from its own
//! ChaCha stream derived from `(master_seed, stream id)`. Streams never
//! interact, so agent updates can run on any number of threads in any order
//! and still produce bitwise-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids 0..2^32 are reserved for portfolio agents/particles.
const AGENT_BASE: u64 = 0;
/// Broker streams live above the agent range.
const BROKER_BASE: u64 = 1 << 32;
/// Stream driving the stochastic fundamental price.
const FUNDAMENTAL_STREAM: u64 = 1 << 33;
/// Stream used to sample initial portfolio/price clouds.
const INIT_STREAM: u64 = (1 << 33) + 1;

fn stream(master_seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(id);
    rng
}

/// Independent stream for agent/particle `index`.
pub fn agent_stream(master_seed: u64, index: usize) -> ChaCha8Rng {
    stream(master_seed, AGENT_BASE + index as u64)
}

/// Independent stream for broker `index`.
pub fn broker_stream(master_seed: u64, index: usize) -> ChaCha8Rng {
    stream(master_seed, BROKER_BASE + index as u64)
}

/// Stream for the stochastic fundamental-price process.
pub fn fundamental_stream(master_seed: u64) -> ChaCha8Rng {
    stream(master_seed, FUNDAMENTAL_STREAM)
}

/// Stream for drawing initial conditions.
pub fn init_stream(master_seed: u64) -> ChaCha8Rng {
    stream(master_seed, INIT_STREAM)
}
