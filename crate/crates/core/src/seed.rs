//! Deterministic seeding shared by every randomized stage.
//!
//! All randomness in the pipeline is derived from a global seed plus the
//! record id it applies to, so results never depend on processing order,
//! shard assignment, or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 step: full-avalanche 64-bit mixer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash; stable across platforms and releases.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mixes a base seed with an identifying string into a stream seed.
pub fn mix_seed(base: u64, id: &str) -> u64 {
    splitmix64(splitmix64(base) ^ fnv1a64(id.as_bytes()))
}

/// Seeding handle for one record under one global seed.
///
/// The derived seed is a pure function of `(global_seed, record_id)`; two
/// contexts with equal fields always derive equal seeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedContext {
    pub global_seed: u64,
    pub record_id: String,
}

impl SeedContext {
    pub fn new(global_seed: u64, record_id: impl Into<String>) -> Self {
        Self {
            global_seed,
            record_id: record_id.into(),
        }
    }

    /// Per-record seed.
    pub fn derive(&self) -> u64 {
        mix_seed(self.global_seed, &self.record_id)
    }

    /// Per-record seed for one named use site, so independent stages never
    /// consume the same stream.
    pub fn derive_labeled(&self, label: &str) -> u64 {
        splitmix64(self.derive() ^ fnv1a64(label.as_bytes()))
    }

    /// Deterministic RNG for one named use site.
    pub fn rng(&self, label: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_labeled(label))
    }
}
