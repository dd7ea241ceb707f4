//! Deterministic seed derivation.
//!
//! Every randomized component in this crate (attack random starts, search
//! breeding, fixture generation) draws from a ChaCha stream seeded through
//! these helpers, so results are reproducible and independent of worker
//! count or evaluation order.

/// SplitMix64 finalizer. Good avalanche behavior for seed mixing.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a stream index.
///
/// Distinct `stream` values yield statistically independent child seeds;
/// the mapping is pure, so any partition of work over streams reproduces
/// the same per-stream randomness.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x517c_c1b7_2722_0a95)))
}

/// Stable 64-bit hash of a byte string (FNV-1a folded through SplitMix64).
///
/// Used to key per-expression randomness: the same expression text always
/// maps to the same seed, in any process, on any platform.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}
