//! Reproducible random streams.
//!
//! Every experiment draws from ChaCha8, a counter-based stream cipher generator.
//! A run seed selects the key and each chain (or generator call) selects an
//! independent stream, so chain `i` of a batch produces the same numbers no
//! matter how many threads the batch is spread over.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type StreamRng = ChaCha8Rng;

/// Generator for stream `stream` under the run seed `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
pub fn standard_normal<T: Real>(rng: &mut StreamRng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

pub fn fill_standard_normal<T: Real>(rng: &mut StreamRng, out: &mut [T]) {
    for v in out.iter_mut() {
        *v = standard_normal(rng);
    }
}
