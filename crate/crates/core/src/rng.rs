//! Deterministic seed derivation.
//!
//! Every stochastic component (scenario generation, weight init, rollout
//! sampling, baselines) draws from its own ChaCha stream derived from the
//! experiment master seed and a component tag, so adding draws to one
//! component never perturbs another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mix a master seed with a component tag into a child seed.
///
/// SplitMix64 finalizer over the master seed xored with an FNV-1a hash of
/// the tag; stable across platforms and releases.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

/// A ChaCha stream for `(master, tag)`.
pub fn stream(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_deterministic_and_tag_sensitive() {
        assert_eq!(derive_seed(7, "scenario"), derive_seed(7, "scenario"));
        assert_ne!(derive_seed(7, "scenario"), derive_seed(7, "rollout"));
        assert_ne!(derive_seed(7, "scenario"), derive_seed(8, "scenario"));
    }

    #[test]
    fn streams_with_same_seed_agree() {
        use rand::RngCore;
        let mut a = stream(42, "x");
        let mut b = stream(42, "x");
        assert_eq!(a.next_u64(), b.next_u64());
    }
}
