//! Explicit, splittable random streams. There is no global rng anywhere in
//! the crate: every chain, replicate and AIS particle owns a stream derived
//! from a master seed and a path of indices.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Child seed for stream `index` under `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

pub fn stream(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for a labelled child of `parent`.
pub fn child(parent: u64, index: u64) -> Rng {
    stream(derive_seed(parent, index))
}

/// A standard normal draw.
pub fn normal(rng: &mut Rng) -> f64 {
    rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, rng)
}

/// Domain tags so that different consumers of one master seed never collide.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const BURN_IN: u64 = 2;
    pub const E_STEP: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const REPLICATE: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const DATA: u64 = 7;
    pub const SWEEP: u64 = 8;
}
