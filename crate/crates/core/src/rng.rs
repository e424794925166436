//! Seeded randomness.
//!
//! Every stochastic stage draws from [`SeedRng`], ChaCha with 8 rounds
//! (`rand_chacha::ChaCha8Rng`). Its output stream is fixed by the seed and
//! independent of platform, word size and endianness, so a seed fully
//! determines every split, model and chain.
//!
//! Independent streams are derived from a master seed with [`derive_seed`]:
//! the master seed and each path component are folded through the
//! SplitMix64 finalizer. String components are first hashed with 64-bit
//! FNV-1a. Streams for different paths are statistically independent for
//! practical purposes, which is what lets chains for different seed samples
//! be generated in any order (or concurrently) with identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeedRng = ChaCha8Rng;

/// One component of a seed derivation path.
#[derive(Debug, Clone, Copy)]
pub enum Stream<'a> {
    Tag(&'a str),
    Index(u64),
}

impl From<&'static str> for Stream<'static> {
    fn from(tag: &'static str) -> Self {
        Stream::Tag(tag)
    }
}

impl From<u64> for Stream<'_> {
    fn from(index: u64) -> Self {
        Stream::Index(index)
    }
}

impl From<usize> for Stream<'_> {
    fn from(index: usize) -> Self {
        Stream::Index(index as u64)
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives a child seed from `master` along `path`.
pub fn derive_seed(master: u64, path: &[Stream<'_>]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, part| {
        let word = match *part {
            Stream::Tag(tag) => fnv1a(tag.as_bytes()),
            Stream::Index(i) => splitmix64(i),
        };
        splitmix64(acc ^ word)
    })
}

pub fn seeded(seed: u64) -> SeedRng {
    SeedRng::seed_from_u64(seed)
}

pub fn derived(master: u64, path: &[Stream<'_>]) -> SeedRng {
    seeded(derive_seed(master, path))
}
