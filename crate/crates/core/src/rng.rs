//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit RNG. Training derives one
//! stream per iteration from `(seed, iteration)` so any step can be replayed
//! without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::points::Points;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal(n: usize, dim: usize, rng: &mut impl rand::Rng) -> Points {
    let data = (0..n * dim)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>();
    Points::from_vec(data, dim).expect("length is a multiple of dim")
}
