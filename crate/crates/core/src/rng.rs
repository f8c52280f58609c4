//! Seeded generators. ChaCha is used because its output stream is fixed by
//! its definition, so goldens stay stable across platforms and crate bumps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer, used for order-independent per-pixel noise.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform value in [0, 1) hashed from a key tuple.
pub(crate) fn hash_unit(a: u64, b: u64, c: u64) -> f64 {
    let h = mix64(a ^ mix64(b ^ mix64(c)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
