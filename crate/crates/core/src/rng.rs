//! Random streams.
//!
//! A chain owns one [`ChainRng`]. Entrywise Gibbs steps draw a fresh 256-bit
//! key from it and give every matrix row its own ChaCha stream under that
//! key, so results do not depend on how rows are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type ChainRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Key for a family of per-row substreams.
#[derive(Clone, Copy, Debug)]
pub struct StreamKey([u8; 32]);

impl StreamKey {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StreamKey(rng.random())
    }

    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.0);
        r.set_stream(index);
        r
    }
}

/// Serializable position of a [`ChainRng`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position, stored as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChainRng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChainRng> {
        let pos: u128 = self.word_pos.parse().ok()?;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(pos);
        Some(r)
    }
}

/// Deterministically mix a base seed with small integers (grid coordinates,
/// replicate index) into an independent seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer over the running state
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}
