//! Seed derivation. Every random stream in a run is a pure function of the
//! master seed plus a small tuple of indices, so any piece of work can be
//! replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named stream families, kept distinct so that e.g. training seed 3 never
/// collides with tournament seed 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    Training = 2,
    Tournament = 3,
    Mutation = 4,
    EnvInstance = 5,
    Policy = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(seed ^ splitmix64(stream as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, stream: Stream, index: u64) -> Rng {
    rng_from_seed(derive_seed(seed, stream, index))
}
