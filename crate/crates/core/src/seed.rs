//! Deterministic seed splitting.
//!
//! A single run seed fans out into independent per-component streams. The
//! rule is `splitmix64(seed ^ fnv1a64(component)) ^ splitmix64(index)` mixed
//! once more through splitmix64, so adding a new component name never
//! perturbs the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used for every random stream in the crate.
pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th stream of `component`.
pub fn derive_seed(seed: u64, component: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a64(component.as_bytes())) ^ splitmix64(index))
}

/// Generator for the `index`-th stream of `component`.
pub fn stream(seed: u64, component: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, component, index))
}
