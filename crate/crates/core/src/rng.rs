//! Counter-based seed derivation.
//!
//! Every random draw in a search comes from a stream keyed by the run seed
//! and the identity of what is being scored, never from a shared generator.
//! Scoring order and worker count therefore cannot change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a sequence of words.
pub fn derive(seed: u64, words: impl IntoIterator<Item = u64>) -> u64 {
    let mut h = mix64(seed);
    for w in words {
        h = mix64(h ^ w.wrapping_mul(GOLDEN).rotate_left(23));
    }
    h
}

/// Domain tags keep streams for different purposes apart.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Domain {
    Completion = 1,
    Noise = 2,
    Synthetic = 3,
}

pub fn derive_tagged(seed: u64, domain: Domain, words: impl IntoIterator<Item = u64>) -> u64 {
    derive(seed, std::iter::once(domain as u64).chain(words))
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
