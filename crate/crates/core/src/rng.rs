//! Seeded random streams.
//!
//! All randomness derives from one global seed. Components draw from named
//! sub-streams ("train", "dropout", "adv-split", "stretch", ...) and, for
//! per-item work, from an indexed stream so results do not depend on how
//! work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of the named sub-stream.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix(seed ^ splitmix(fnv1a(name)))
}

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, name))
}

/// Stream for item `index` of a named sub-stream.
pub fn indexed(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(derive_seed(seed, name) ^ splitmix(index.wrapping_add(1))))
}

/// Standard-normal vector.
pub fn normal_vec(rng: &mut impl rand::Rng, n: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}
