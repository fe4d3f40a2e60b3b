//! Seed derivation for reproducible per-item random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ingest::shard::fnv1a64;

/// Stable seed for `(master, key)`, independent of iteration order or thread count.
pub fn derive_seed(master: u64, key: &str) -> u64 {
    let mut bytes = master.to_le_bytes().to_vec();
    bytes.extend_from_slice(key.as_bytes());
    // splitmix64 finaliser to spread FNV's weak low bits
    let mut z = fnv1a64(&bytes).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(master: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, key))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_keyed() {
        let a: u64 = stream(7, "D01/2016").random();
        let b: u64 = stream(7, "D01/2016").random();
        let c: u64 = stream(7, "D01/2017").random();
        let d: u64 = stream(8, "D01/2016").random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
