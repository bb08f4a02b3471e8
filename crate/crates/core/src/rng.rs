//! Seeding helpers. Every stochastic routine derives independent per-chain or
//! per-item generators from a single draw on the caller's generator, so results
//! do not depend on how work is scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

/// Generator for stream `index` under `base`.
pub fn stream(base: u64, index: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng
}

/// Draws a fresh base seed from `rng`.
pub fn fork<R: RngCore + ?Sized>(rng: &mut R) -> u64 {
    rng.next_u64()
}

pub fn seeded(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw in the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return u;
        }
    }
}
