//! Seed derivation. Every component draws from its own ChaCha stream whose seed
//! is derived from the run seed and a label, so adding randomness to one
//! component never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Seed for the stream named `label` under `seed`.
pub fn fork_seed(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(label)))
}

/// Seed for the `index`-th item of a labelled stream (e.g. one query of a sampler run).
pub fn indexed_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(fork_seed(seed, label) ^ index)
}

pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fork_seed(seed, label))
}
