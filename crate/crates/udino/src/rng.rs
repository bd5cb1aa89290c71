//! Deterministic RNG derivation.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] derived from a
//! user seed plus a list of integer tags (purpose, step, item index, ...).
//! Parallel sections derive one stream per item from its index, so results do
//! not depend on thread scheduling.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

// Stream tags for the independent sampling sites.
pub const TAG_SYNTH: u64 = 1;
pub const TAG_CROP: u64 = 2;
pub const TAG_AUGMENT: u64 = 3;
pub const TAG_MODEL_INIT: u64 = 4;
pub const TAG_SHUFFLE: u64 = 5;
pub const TAG_KMEANS: u64 = 6;
pub const TAG_GRADCHECK: u64 = 7;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a sequence of tags into a single 64-bit stream id.
pub fn mix(seed: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// Derive a seeded generator for a tagged sampling site.
pub fn derive(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tags))
}

/// Standard-normal draw via Box-Muller. One value per call; deterministic
/// given the generator state.
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn normal_f32(rng: &mut impl Rng) -> f32 {
    normal(rng) as f32
}
