//! Named random streams.
//!
//! Each consumer (real-data sampler, noise sampler, parameter init, …) draws
//! from its own ChaCha stream derived from the run seed, so switching one
//! consumer off never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamId {
    InitPhi = 1,
    InitGenerator = 2,
    InitMean = 3,
    InitCov = 4,
    InitHead = 5,
    Real = 10,
    Noise = 11,
    GenLabels = 12,
    Labeled = 13,
    GeneratorReal = 14,
    Eval = 20,
}

pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

/// Serializable position of a stream created by [`stream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u128,
}

impl StreamState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self { seed, stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
