//! Seeded random streams.
//!
//! All randomness flows through [`ChaCha8Rng`], which produces the same
//! sequence on every platform. Independent streams are derived from a master
//! seed plus a path of integer tags (trial index, circuit index, ...), so a
//! trial's draws never depend on how many other trials ran before it or on
//! which thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and `tag`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Derives a seed from a path of tags, e.g. `&[trial, stage, circuit]`.
pub fn derive_path(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(seed, |s, &t| derive_seed(s, t))
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    stream(derive_path(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = substream(7, &[1, 2]).random_iter().take(4).collect();
        let b: Vec<u64> = substream(7, &[1, 2]).random_iter().take(4).collect();
        let c: Vec<u64> = substream(7, &[2, 1]).random_iter().take(4).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
    }

    #[test]
    fn stream_is_pinned() {
        // Guards against silent changes of the generator across dependency bumps.
        let x: u64 = stream(42).random();
        assert_eq!(x, 12578764544318200737);
        // Reference first output of splitmix64 from state 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(derive_path(7, &[1, 2]), 3326592890226986557);
        assert_eq!(derive_path(1, &[]), 1);
    }
}
