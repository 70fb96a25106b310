//! L2 clipping followed by the Gaussian mechanism.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FedmapError, Result};
use crate::nn::GradientVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub clip_norm: f64,
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    1e-5
}

impl DpConfig {
    pub fn new(clip_norm: f64, epsilon: f64, delta: f64) -> Result<Self> {
        let c = Self {
            clip_norm,
            epsilon,
            delta,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_norm > 0.0) || !(self.epsilon > 0.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(FedmapError::Config(format!(
                "dp needs clip_norm > 0, epsilon > 0, 0 < delta < 1 (got {}, {}, {})",
                self.clip_norm, self.epsilon, self.delta
            )));
        }
        Ok(())
    }

    /// Noise standard deviation `sqrt(2 ln(1.25/delta)) * C / epsilon`.
    pub fn sigma(&self) -> f64 {
        (2.0 * (1.25 / self.delta).ln()).sqrt() * self.clip_norm / self.epsilon
    }
}

/// Scales `grad` down to norm `clip_norm` when it is longer.
pub fn clip_gradient(grad: &GradientVector, clip_norm: f64) -> GradientVector {
    let n = grad.norm();
    if n <= clip_norm {
        grad.clone()
    } else {
        grad.scaled(clip_norm / n)
    }
}

/// Clips, then adds i.i.d. `N(0, sigma^2)` to every coordinate.
pub fn gaussian_mechanism<R: Rng + ?Sized>(grad: &GradientVector, dp: &DpConfig, rng: &mut R) -> GradientVector {
    let clipped = clip_gradient(grad, dp.clip_norm);
    let noise = Normal::new(0.0, dp.sigma()).expect("validated dp config");
    let flat = clipped.flat().iter().map(|v| v + noise.sample(rng)).collect();
    clipped.with_flat(flat).expect("same length")
}
