//! Deterministic random-stream derivation.
//!
//! All randomness in the crate flows from one top-level `u64` seed. Every
//! consumer derives its own named substream (`seed`, `label`) → ChaCha key,
//! so parallel workers never share a generator and runs are bit-reproducible
//! regardless of scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a hash of a label string.
pub fn fnv1a(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Expand `(seed, label)` into a ChaCha12 generator.
///
/// The label is hashed with FNV-1a, xor-combined with the seed, and expanded
/// through SplitMix64 into a 256-bit key, so even adjacent seeds and similar
/// labels produce unrelated streams.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha12Rng {
    let mut state = seed ^ fnv1a(label);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}
