//! Keyed SplitMix64 streams.
//!
//! Every random decision in a run draws from its own stream, keyed by
//! `(seed, purpose tag, epoch, batch)`. Streams never share state, so adding
//! or removing draws for one purpose (say, epoch selection) cannot shift the
//! numbers another purpose sees (say, weight init). The derivation uses only
//! 64-bit integer arithmetic and is easy to port:
//!
//! ```text
//! key  = mix64(seed ^ GOLDEN)
//! key  = mix64(key ^ fnv1a64(tag))
//! key  = mix64(key ^ epoch)
//! key  = mix64(key ^ batch)
//! state <- key; each draw: state += GOLDEN; return mix64(state)
//! ```

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)` by 128-bit multiply-high.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "empty range");
        ((self.next() as u128 * n as u128) >> 64) as u64
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

/// The stream for `(seed, tag, epoch, batch)`.
pub fn stream(seed: u64, tag: &str, epoch: u64, batch: u64) -> SplitMix64 {
    let mut key = mix64(seed ^ GOLDEN);
    key = mix64(key ^ fnv1a64(tag.as_bytes()));
    key = mix64(key ^ epoch);
    key = mix64(key ^ batch);
    SplitMix64::new(key)
}

/// Purpose tags used by the engine.
pub mod tags {
    pub const EPOCH_SELECT: &str = "trd/epoch-select";
    pub const VARIANT_RESOLUTION: &str = "trd/variant-resolution";
    pub const BATCH_WISE: &str = "trd/batch-wise";
    pub const INIT: &str = "model/init";
    pub const SHUFFLE: &str = "data/shuffle";
    pub const AUGMENT: &str = "data/augment";
}
