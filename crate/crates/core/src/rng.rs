use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible random stream: a 64-bit seed plus a stream index.
///
/// Identical `(seed, stream)` pairs yield bit-identical draws. Parallel or
/// staged consumers take distinct streams of the same seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplerSeed {
    pub seed: u64,
    pub stream: u64,
}

impl SamplerSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Streams used by the experiment pipeline. Fixed so reports are stable.
pub mod streams {
    pub const FLOW_INIT: u64 = 0;
    pub const FISHER: u64 = 1;
    pub const FISHER_SUP: u64 = 2;
    pub const PROBES: u64 = 3;
    pub const GENERIC_SCORE: u64 = 4;
}
