//! Deterministic stream derivation. Every random object is keyed by
//! `(seed, replica, tag)` so runs are reproducible regardless of thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replica `replica` of a run seeded by `seed`.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    splitmix(splitmix(seed) ^ splitmix(replica.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Independent ChaCha stream for `tag` under `seed`.
pub fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}
