//! Seeded random streams.
//!
//! Every random consumer in the pipeline draws from its own ChaCha8 stream
//! derived from the master seed and a short key path, e.g.
//! `(seed, SHUFFLE, epoch)` or `(seed, FOLD, k)`. Streams never share state,
//! so results do not depend on the order in which stages or folds run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const NOISE: u64 = 1;
pub const FOLDS: u64 = 2;
pub const FOLD_TRAIN: u64 = 3;
pub const INIT: u64 = 4;
pub const SHUFFLE: u64 = 5;
pub const MIX: u64 = 6;
pub const SYNTH_TRAIN: u64 = 7;
pub const SYNTH_TEST: u64 = 8;
pub const SUBSET: u64 = 9;
pub const RISK: u64 = 10;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from a master seed and a key path.
pub fn stream(seed: u64, keys: &[u64]) -> Rng {
    let mut h = splitmix64(seed);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
