use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of PAE inputs replaced by null observations, ramped linearly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub p_start: f64,
    pub p_end: f64,
    pub ramp_updates: u64,
}

impl CurriculumSchedule {
    pub const P_START: f64 = 0.3;
    pub const P_END: f64 = 0.98;

    /// Ramp over the first half of `total_updates`.
    pub fn for_updates(total_updates: u64) -> Self {
        CurriculumSchedule {
            p_start: Self::P_START,
            p_end: Self::P_END,
            ramp_updates: total_updates / 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.p_start && self.p_start <= self.p_end && self.p_end <= 1.0) {
            return Err(Error::Config(format!(
                "curriculum needs 0 <= p_start <= p_end <= 1, got {} and {}",
                self.p_start, self.p_end
            )));
        }
        Ok(())
    }
}

pub fn mask_probability(update: u64, s: &CurriculumSchedule) -> f64 {
    if update >= s.ramp_updates {
        return s.p_end;
    }
    s.p_start + (s.p_end - s.p_start) * update as f64 / s.ramp_updates as f64
}

/// Bernoulli(p) mask per step; the first step is never masked.
pub fn draw_mask(rng: &mut impl Rng, steps: usize, p: f64) -> Vec<bool> {
    (0..steps).map(|t| t > 0 && rng.random_bool(p)).collect()
}
