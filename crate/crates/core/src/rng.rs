//! Seed derivation. Every random stream is a ChaCha8 generator keyed by a
//! mixed 64-bit seed and selected by a stream number, so results depend only
//! on `(seed, tag, index)` and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream families. Distinct tags never share a key.
pub(crate) const TAG_SAMPLE: u64 = 0x5341_4d50;
pub(crate) const TAG_PROTOCOL: u64 = 0x5052_4f54;
pub(crate) const TAG_JITTER: u64 = 0x4a49_5454;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a list of words into one key.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, p| mix64(acc ^ mix64(*p)))
}

pub fn stream(key: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Where a sample came from: the experiment seed and the trial index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPath {
    pub seed: u64,
    pub trial: u64,
}

impl SeedPath {
    pub fn new(seed: u64, trial: u64) -> Self {
        SeedPath { seed, trial }
    }

    /// Stream for drawing the witness matrix of an `n`-player trial.
    pub fn sample_rng(&self, n: usize) -> ChaCha8Rng {
        stream(derive_seed(self.seed, &[TAG_SAMPLE, n as u64]), self.trial)
    }

    /// Seed handed to the protocol run of this trial.
    pub fn protocol_seed(&self, n: usize) -> u64 {
        derive_seed(self.seed, &[TAG_PROTOCOL, n as u64, self.trial])
    }
}
