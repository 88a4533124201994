//! Seeding helpers.
//!
//! Every randomized stage derives its generator from a user seed plus a
//! stable name, so work can be split across threads without changing results.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

/// Default seed for every randomized stage.
pub const DEFAULT_SEED: u64 = 0xC0FFEE;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Combine two 64-bit values into one well-mixed seed.
#[inline]
pub fn combine(a: u64, b: u64) -> u64 {
    mix64(a ^ mix64(b).rotate_left(17))
}

/// Seed for the stream named `name` under the user seed `seed`.
pub fn stream_seed(seed: u64, name: &str) -> u64 {
    combine(seed, fnv1a(name.as_bytes()))
}

pub fn stream(seed: u64, name: &str) -> StageRng {
    StageRng::seed_from_u64(stream_seed(seed, name))
}

pub fn stream_u64(seed: u64, id: u64) -> StageRng {
    StageRng::seed_from_u64(combine(seed, id))
}
