//! Second-order belief prediction error as intrinsic reward.

use crate::error::{Error, Result};
use crate::policy::{second_order_loss, BeliefVector, SecondOrderBeliefs};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntrinsicConfig {
    pub lambda: f64,
    /// Bound on `|r_tom|`; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            clip: Some(10.0),
        }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidConfig("tom clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Negative second-order prediction loss of `self_index` about everyone else.
/// The beliefs are plain values here: this quantity only ever enters the
/// return.
pub fn tom_reward(pred: &SecondOrderBeliefs, actuals: &[BeliefVector], self_index: usize) -> Result<f64> {
    Ok(-second_order_loss(pred, actuals, self_index)?)
}

pub fn combined_reward(r_task: f64, r_tom: f64, config: &IntrinsicConfig) -> f64 {
    let bounded = match config.clip {
        Some(c) => r_tom.clamp(-c, 0.0),
        None => r_tom.min(0.0),
    };
    r_task + config.lambda * bounded
}
