//! Waiting policies.
//!
//! After the acknowledgment of a successful delivery the sampler may hold the
//! next sample for a waiting time. The optimal policy is a threshold on the
//! observed first-attempt round trip: wait until the elapsed round trip plus
//! the wait reaches `theta`, so the wait is `(theta - d_a)^+`. Failed attempts
//! are resampled immediately and never wait.

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMoments;
use crate::error::{Error, Result};

/// A fully specified waiting rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    /// Wait `(theta - d_a)^+` after the first attempt of each epoch.
    Threshold { theta: f64 },
    /// Wait a fixed time after the first attempt of each epoch.
    ConstantWait { w: f64 },
    /// Never wait.
    ZeroWait,
}

impl Policy {
    pub fn threshold(theta: f64) -> Result<Self> {
        if !(theta.is_finite() && theta >= 0.0) {
            return Err(Error::invalid(format!(
                "threshold must be finite and nonnegative, got {theta}"
            )));
        }
        Ok(Policy::Threshold { theta })
    }

    pub fn constant_wait(w: f64) -> Result<Self> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::invalid(format!(
                "constant wait must be finite and nonnegative, got {w}"
            )));
        }
        Ok(Policy::ConstantWait { w })
    }
}

/// Waiting time prescribed by `policy` when the opening attempt of an epoch
/// took `d_a`; repeat attempts (`is_first = false`) always go out immediately.
pub fn waiting_time(policy: Policy, d_a: f64, is_first: bool) -> f64 {
    if !is_first {
        return 0.0;
    }
    match policy {
        Policy::Threshold { theta } => (theta - d_a).max(0.0),
        Policy::ConstantWait { w } => w,
        Policy::ZeroWait => 0.0,
    }
}

/// Constant-wait baseline that meets a sampling-frequency budget in the mean:
/// the wait is sized so the average time per sample is `1 / f_max`. Without a
/// budget (`f_max` infinite) it degenerates to zero wait.
pub fn constant_wait_from_moments(moments: &ChannelMoments, f_max: f64) -> Policy {
    let w = (moments.mean_m / f_max - moments.mean_da - moments.mean_dv).max(0.0);
    Policy::ConstantWait { w }
}

/// Policy selector used by run configurations: the two learned variants plus
/// the offline baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySpec {
    /// Online threshold learning.
    Online,
    /// Online learning with momentum averaging of the update direction.
    OnlineMomentum,
    /// Constant wait sized from the channel moments and the frequency budget.
    ConstantWait,
    /// Send immediately at every acknowledgment.
    ZeroWait,
    /// Fixed threshold, no learning.
    FixedThreshold { theta: f64 },
}

impl PolicySpec {
    /// Stable name used in table columns.
    pub fn name(&self) -> String {
        match self {
            PolicySpec::Online => "online".into(),
            PolicySpec::OnlineMomentum => "online_momentum".into(),
            PolicySpec::ConstantWait => "constant_wait".into(),
            PolicySpec::ZeroWait => "zero_wait".into(),
            PolicySpec::FixedThreshold { theta } => format!("fixed_threshold_{theta}"),
        }
    }

    /// Whether the spec runs the learner.
    pub fn is_online(&self) -> bool {
        matches!(self, PolicySpec::Online | PolicySpec::OnlineMomentum)
    }
}
