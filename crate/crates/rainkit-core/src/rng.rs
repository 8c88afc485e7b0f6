//! Seed plumbing. Every random decision in the crate flows from one master
//! seed through [`derive_seed`], so runs are reproducible bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a sub-seed for a named component (and optional index) from a master seed.
///
/// FNV-1a over the tag keeps the derivation stable across platforms and builds.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= index;
    h = h.wrapping_mul(0x0000_0100_0000_01b3);
    h ^ master.rotate_left(17)
}

/// The crate-wide RNG. ChaCha8 is seedable, portable and fast enough.
pub fn rng_from(master: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}
