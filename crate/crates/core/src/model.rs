use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// The triple (H, γ, c): Hurst index, reflection constant and drift of the
/// input Y(t) = X_H(t) − c·t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hurst: f64,
    pub gamma: f64,
    pub drift: f64,
}

impl ModelParams {
    pub fn new(hurst: f64, gamma: f64, drift: f64) -> Result<Self> {
        let p = Self { hurst, gamma, drift };
        p.validate()?;
        Ok(p)
    }

    /// Checks H ∈ (0,1), γ ∈ [0,1], c > 0. Useful after deserializing.
    pub fn validate(&self) -> Result<()> {
        check_hurst(self.hurst)?;
        ensure((0.0..=1.0).contains(&self.gamma), "gamma", self.gamma, "must lie in [0, 1]")?;
        ensure(self.drift > 0.0 && self.drift.is_finite(), "drift", self.drift, "must be positive")
    }

    /// The passage-time limit theorem needs 0 < γ < 1.
    pub fn require_interior_gamma(&self) -> Result<()> {
        ensure(
            self.gamma > 0.0 && self.gamma < 1.0,
            "gamma",
            self.gamma,
            "must lie in (0, 1) for conditional passage-time results",
        )
    }
}

pub(crate) fn check_hurst(hurst: f64) -> Result<()> {
    ensure(hurst > 0.0 && hurst < 1.0, "hurst", hurst, "must lie in (0, 1)")
}
