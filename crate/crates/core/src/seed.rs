//! Seed splitting.
//!
//! Every random consumer gets its own stream derived from a parent seed, a
//! stream label and an index:
//!
//! ```text
//! child = splitmix64(parent ^ splitmix64(fnv1a(label)) ^ splitmix64(index + 1))
//! ```
//!
//! Derived seeds depend only on their inputs, so a stage's randomness does not
//! shift when another stage draws more or fewer numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream labels used across the crate.
pub mod stream {
    pub const SAMPLER: &str = "sampler";
    pub const OPTIMIZER: &str = "optimizer";
    pub const RESPONDER: &str = "responder";
    pub const BUFFER: &str = "buffer";
    pub const DEMO: &str = "demo";
    pub const RESTART: &str = "restart";
    pub const SUBSAMPLE: &str = "subsample";
    pub const NOISE: &str = "noise";
    pub const POOL: &str = "pool";
    pub const BOOTSTRAP: &str = "bootstrap";
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
