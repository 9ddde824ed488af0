//! Deterministic seed derivation.
//!
//! Every consumer of randomness (corpus rendering, batch sampling,
//! augmentation, init) gets its own stream derived from the run seed, a
//! domain string, and a counter, so adding a draw in one place never shifts
//! any other stream.

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit permutation.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the `domain` stream at position `counter` under `base`.
pub fn derive(base: u64, domain: &str, counter: u64) -> u64 {
    // FNV-1a over the domain name keeps distinct domains decorrelated.
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in domain.as_bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3);
    }
    mix(base ^ mix(h) ^ mix(counter.wrapping_add(0x5151_5151)))
}
