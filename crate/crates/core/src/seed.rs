//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from one base seed by hashing a
//! path of stream tags with SplitMix64. Work split across threads draws from
//! streams named by the work item index, so results do not depend on how
//! items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used throughout the crate.
pub mod stream {
    pub const TRIAL: u64 = 0x7472_6961_6c00;
    pub const PILOT: u64 = 0x7069_6c6f_7400;
    pub const ONLINE: u64 = 0x6f6e_6c69_6e65;
    pub const ALLOCATION: u64 = 0x616c_6c6f_6300;
    pub const DESIGN: u64 = 0x6465_7369_676e;
    pub const ACQUISITION: u64 = 0x6163_7175_6900;
    pub const GP: u64 = 0x6770_0000_0000;
    pub const FALLBACK: u64 = 0x6661_6c6c_6200;
    pub const REFERENCE: u64 = 0x7265_6600_0000;
    pub const ORACLE: u64 = 0x6f72_6163_6c65;
    pub const MULTISTART: u64 = 0x6d75_6c74_6900;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a path of stream tags.
pub fn derive(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Seeded generator used for every random draw in the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
