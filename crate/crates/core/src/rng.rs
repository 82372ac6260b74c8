//! Counter-based random streams.
//!
//! Every stochastic operation takes a `u64` seed and derives an independent
//! ChaCha stream per `(seed, sample, channel)` triple, so a batch gives the
//! same values no matter how it is chunked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of counters into a new seed.
pub fn derive_seed(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(splitmix64(seed), |acc, &c| splitmix64(acc ^ splitmix64(c.wrapping_add(0x632b_e59b_d9b4_e019))))
}

pub fn stream(seed: u64, sample: u64, channel: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[sample, channel]))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed))
}

pub fn standard_normal<R: Real, G: Rng + ?Sized>(rng: &mut G) -> R {
    let z: f64 = rng.sample(StandardNormal);
    R::of(z)
}

pub fn fill_standard_normal<R: Real, G: Rng + ?Sized>(rng: &mut G, out: &mut [R]) {
    for v in out {
        *v = standard_normal(rng);
    }
}
