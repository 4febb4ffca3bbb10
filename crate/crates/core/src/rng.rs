//! Seeded random streams.
//!
//! Every consumer of randomness inside a training run draws from its own
//! ChaCha stream, keyed by purpose, task position and restart attempt. Two
//! runs that differ only in whether they consume one stream (e.g. replay
//! retrieval) therefore see identical draws on every other stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Scalar;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamKind {
    Init = 1,
    DataOrder = 2,
    Noise = 3,
    ReplayRetrieval = 4,
    ReplayNoise = 5,
    BufferUpdate = 6,
    Evaluation = 7,
}

/// Factory of independent, reproducible random streams for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `kind` at task position `task` and restart `attempt`.
    pub fn stream(&self, kind: StreamKind, task: usize, attempt: usize) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ splitmix64(kind as u64)));
        rng.set_stream(((task as u64) << 32) | attempt as u64);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Standard normal draw converted to the target precision.
pub fn normal<S: Scalar, R: rand::Rng + ?Sized>(rng: &mut R) -> S {
    let v: f64 = StandardNormal.sample(rng);
    S::lit(v)
}

pub fn normal_vec<S: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<S> {
    (0..n).map(|_| normal(rng)).collect()
}
