//! Deterministic seeding conventions used by every randomized stage.
//!
//! All randomness flows from a single `u64` master seed through
//! [`ChaCha8Rng`]. Stage-local streams (per page, per epoch, per network
//! side) are derived with [`derive_seed`] so that the draw count of one
//! stage never shifts another stage's stream. The derivation is a single
//! splitmix64 step keyed by a stream index, which keeps datasets,
//! checkpoints and reports byte-reproducible across runs and platforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// One splitmix64 output step; advances `state`.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed for stream `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut state = master ^ index.wrapping_mul(0xA076_1D64_78BD_642F);
    splitmix64(&mut state)
}

/// FNV-1a over bytes; used to key per-document streams and to
/// fingerprint architecture descriptions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform f64 in [0, 1) from the top 53 bits of one draw.
pub fn uniform_unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `[0, n)`. One draw per call; the modulo bias is
/// negligible for the index ranges used here (n << 2^32).
pub fn uniform_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    assert!(n > 0, "uniform_index over empty range");
    (rng.next_u64() % n as u64) as usize
}

/// Fisher-Yates shuffle: for i from len-1 down to 1, swap(i, j) with
/// j = next_u64() % (i + 1). Fixed convention so permutations are
/// reproducible from the seed alone.
pub fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Draws `k` distinct indices from `[0, n)`, returned in increasing
/// order (partial Fisher-Yates over an index table, then sort).
pub fn sample_indices(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}
