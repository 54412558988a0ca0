use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickMeConfig {
    /// Active painting timer, started by the first stroke.
    pub round_duration_ms: u64,
    /// Total time a drawing is on screen; reported to clients, not enforced.
    pub display_budget_ms: u64,
    pub image_size: usize,
    /// Side of the square revealed around every stroke point.
    pub brush_size: usize,
    /// Score of a win is `floor(remaining_ms / score_divisor)`.
    pub score_divisor: u64,
    /// Also persist maps of timed-out rounds (with zero score).
    pub include_timed_out: bool,
    pub blur_size: usize,
    pub blur_sigma: Option<f64>,
    pub seed: u64,
}

impl Default for ClickMeConfig {
    fn default() -> Self {
        Self {
            round_duration_ms: 5000,
            display_budget_ms: 7000,
            image_size: 256,
            brush_size: 21,
            score_divisor: 10,
            include_timed_out: false,
            blur_size: 49,
            blur_sigma: None,
            seed: 0,
        }
    }
}

impl ClickMeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.round_duration_ms == 0 || self.image_size == 0 || self.score_divisor == 0 {
            return Err(Error::InvalidArgument("durations, sizes and divisors must be positive".into()));
        }
        if self.brush_size == 0 || self.brush_size % 2 == 0 {
            return Err(Error::InvalidArgument("brush size must be odd".into()));
        }
        if self.blur_size % 2 == 0 {
            return Err(Error::InvalidArgument("blur kernel size must be odd".into()));
        }
        Ok(())
    }
}
