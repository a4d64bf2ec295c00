//! Named random streams.
//!
//! Every stream is ChaCha8 keyed by the 64-bit run seed with a 64-bit stream
//! id, so each processor and bus draws from its own sequence no matter how
//! events interleave. Uniforms are the top 53 bits of a `u64` scaled to
//! `[0, 1)`; exponentials use the inverse transform `-ln(1 - u) / rate`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Interarrival = 0,
    Destination = 1,
    Service = 2,
    Arbitration = 3,
}

pub struct Stream(ChaCha8Rng);

impl Stream {
    pub fn new(seed: u64, kind: StreamKind, index: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((kind as u64) << 32) | index as u64);
        Stream(rng)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }
}
