//! Seed derivation.
//!
//! Every random stream in a run is keyed by a tuple such as
//! `(seed, round, client, phase)` and mixed with splitmix64, so results do not
//! depend on the order in which parallel client tasks execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// One step of the splitmix64 output function.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

/// Random-stream phases; the discriminant enters the seed mix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Phase {
    ModelInit = 1,
    LocalTrain = 2,
    LearnWeights = 3,
    DataMeans = 4,
    DataClient = 5,
    ShiftParams = 6,
}

pub fn stream(seed: u64, round: u64, client: u64, phase: Phase) -> SimRng {
    SimRng::seed_from_u64(derive_seed(&[seed, round, client, phase as u64]))
}
