//! Seed derivation. Every random stream is keyed by `(seed, purpose, index)`
//! so results do not depend on generation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) const STREAM_IMAGE: u64 = 1;
pub(crate) const STREAM_VOXEL_NOISE: u64 = 2;
pub(crate) const STREAM_VOXEL_PROJECTION: u64 = 3;
pub(crate) const STREAM_ENCODER: u64 = 4;
pub(crate) const STREAM_SHUFFLE: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for stream `purpose`, item `index`, derived from `seed`.
pub fn derive_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(purpose)));
    rng.set_stream(index);
    rng
}

pub(crate) fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}
