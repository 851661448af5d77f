//! Seeded randomness.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded through
//! `seed_from_u64`, and shuffles use the Fisher–Yates variant in [`shuffle`]
//! so permutations depend only on the generator's `u64` output.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn derived(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// In-place Fisher–Yates: for `i` from the end, swap with `next_u64() % (i+1)`.
pub fn shuffle<T>(items: &mut [T], rng: &mut impl RngCore) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}
