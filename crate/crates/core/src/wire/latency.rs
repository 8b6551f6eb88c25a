use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::WireError;

/// Per-message link delay: `base_ms + uniform[0, jitter_ms)`.
///
/// Each draw is a pure function of `(seed, source, destination, message
/// index)`, so a run's delays do not depend on the order in which links are
/// exercised.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub base_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { base_ms: 1.0, jitter_ms: 0.0, seed: 0 }
    }
}

impl LatencyModel {
    pub fn new(base_ms: f64, jitter_ms: f64, seed: u64) -> Result<Self, WireError> {
        let model = LatencyModel { base_ms, jitter_ms, seed };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if !(self.base_ms.is_finite() && self.base_ms >= 0.0) {
            return Err(WireError::InvalidParameter("base_ms must be finite and non-negative"));
        }
        if !(self.jitter_ms.is_finite() && self.jitter_ms >= 0.0) {
            return Err(WireError::InvalidParameter("jitter_ms must be finite and non-negative"));
        }
        Ok(())
    }

    /// Delay of the `index`-th message sent from `source` to `destination`.
    pub fn delay_ms(&self, source: u32, destination: u32, index: u64) -> f64 {
        if self.jitter_ms == 0.0 {
            return self.base_ms;
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..12].copy_from_slice(&source.to_le_bytes());
        key[12..16].copy_from_slice(&destination.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        // one u64 consumes two 32-bit words of the keystream
        rng.set_word_pos(u128::from(index) * 2);
        let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.base_ms + unit * self.jitter_ms
    }

    /// [`LatencyModel::delay_ms`] rounded to whole microseconds.
    pub fn delay_us(&self, source: u32, destination: u32, index: u64) -> u64 {
        (self.delay_ms(source, destination, index) * 1000.0).round() as u64
    }
}
