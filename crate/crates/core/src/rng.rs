//! Reproducible random streams.
//!
//! Stream `(seed, tag, index)` is a ChaCha8 generator keyed by a mix of
//! `seed` and `tag` and positioned on stream `index`, so each replicate's
//! draws depend only on its own coordinates and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod tag {
    pub const SIMULATION: u64 = 0x51;
    pub const BOOTSTRAP: u64 = 0xB0;
    pub const LOCATIONS: u64 = 0x10;
    pub const FIELD: u64 = 0xF1;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(seed, tag, index)`; use to nest streams.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    let mut key = [0u8; 32];
    let mut z = splitmix64(seed) ^ splitmix64(tag.rotate_left(17));
    for chunk in key.chunks_exact_mut(8) {
        z = splitmix64(z);
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
