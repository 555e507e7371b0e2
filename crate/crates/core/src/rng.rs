//! Named, order-independent random substreams.
//!
//! Every random decision in a run is drawn from a ChaCha stream whose seed is
//! derived from the global seed and a path of integers (epoch, graph index,
//! view index, ...). Two runs with the same seed consume identical streams no
//! matter how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit tag for a substream name (FNV-1a).
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Folds a path of integers into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Stream for `(seed, name, path...)`.
pub fn substream(seed: u64, name: &str, path: &[u64]) -> Rng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(tag(name));
    full.extend_from_slice(path);
    Rng::seed_from_u64(derive_seed(seed, &full))
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
