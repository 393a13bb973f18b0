//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] keyed by
//! `(seed, domain)` and positioned on stream `index`. Replicate `r` of an
//! experiment always uses stream `r`, so results do not depend on how work is
//! split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Domain tags separating the independent uses of one user seed.
pub mod domain {
    pub const SKELETON: u64 = 0x01;
    pub const LIMIT: u64 = 0x02;
    pub const REFERENCE: u64 = 0x03;
    pub const SCALING: u64 = 0x04;
    pub const STEP: u64 = 0x05;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key derived from a seed, a domain tag and a sub-key (e.g. the sample size).
pub fn derive_key(seed: u64, domain: u64, sub: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ sub)
}

/// Stream `index` under `key`.
pub fn substream(key: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
