//! Seed handling. Every stochastic routine takes an explicit seed; parallel
//! trials derive theirs with [`trial_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: `splitmix64(base ^ splitmix64(trial))`.
pub fn trial_seed(base: u64, trial: u64) -> u64 {
    splitmix64(base ^ splitmix64(trial))
}

/// Independent sub-stream for a named purpose within one trial.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed.wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}
