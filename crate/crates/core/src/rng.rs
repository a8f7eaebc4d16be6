//! Deterministic randomness streams.
//!
//! Every replicate owns a private [`Stream`] whose seed is derived from the
//! experiment's root seed and the replicate index:
//!
//! ```text
//! stream_seed(root, i) = mix64(root + GOLDEN · (i + 1))   (wrapping u64 arithmetic)
//! mix64(z) = splitmix64 finaliser:
//!     z = (z ^ (z >> 30)) · 0xBF58476D1CE4E5B9
//!     z = (z ^ (z >> 27)) · 0x94D049BB133111EB
//!     z ^ (z >> 31)
//! ```
//!
//! with `GOLDEN = 0x9E3779B97F4A7C15`. The map `i ↦ stream_seed(root, i)` is
//! injective for a fixed root (GOLDEN is odd and `mix64` is a bijection). The
//! stream itself is ChaCha8 seeded through `SeedableRng::seed_from_u64`.
//! Sub-streams for auxiliary tasks are obtained with [`derive_seed`] using a
//! domain tag, then indexed as usual.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator family used by every replicate.
pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream for replicate `index` under `root_seed`.
pub fn stream_seed(root_seed: u64, index: u64) -> u64 {
    mix64(root_seed.wrapping_add(GOLDEN.wrapping_mul(index.wrapping_add(1))))
}

/// The randomness stream owned by replicate `index`.
pub fn derive_stream(root_seed: u64, index: u64) -> Stream {
    Stream::seed_from_u64(stream_seed(root_seed, index))
}

/// Root seed of an independent family of streams, keyed by a text tag.
pub fn derive_seed(root_seed: u64, tag: &str) -> u64 {
    let mut h = root_seed ^ 0x243F_6A88_85A3_08D3;
    for b in tag.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h.wrapping_add(GOLDEN))
}
