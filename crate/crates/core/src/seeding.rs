//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep streams derived from the same base seed apart.
pub(crate) mod domain {
    pub const WORLD: u64 = 0x5749_4f52_4c44;
    pub const EMBED: u64 = 0x454d_4245_4444;
    pub const OUTPUT: u64 = 0x4f55_5450_5554;
    pub const TASKS: u64 = 0x5441_534b_53;
    pub const EXPLORE: u64 = 0x4558_504c_4f52;
    pub const GUESS: u64 = 0x4755_4553_53;
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const GROUP: u64 = 0x4752_4f55_50;
    pub const SPLIT: u64 = 0x5350_4c49_54;
    pub const BASELINE: u64 = 0x4241_5345;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Order-sensitive 64-bit mix of a list of words. Stable across platforms and releases.
pub fn mix(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A ChaCha8 stream keyed by the mixed parts.
pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_is_order_sensitive() {
        assert_ne!(mix(&[1, 2]), mix(&[2, 1]));
        assert_eq!(mix(&[7, 8, 9]), mix(&[7, 8, 9]));
    }
}
