//! Keyed random streams.
//!
//! Every task draws from its own ChaCha8 stream, selected by a key derived
//! from the task's identity, so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RandomStream = ChaCha8Rng;

/// Stream for `key` under `master_seed`.
pub fn stream(master_seed: u64, key: &[u64]) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(fold_key(key));
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold_key(key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(key.len() as u64), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}
