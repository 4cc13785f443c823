//! Online learning of the waiting threshold.
//!
//! The long-run age-optimal threshold is the root of a decreasing function
//! that is only observable through per-epoch noise. At each acknowledgment
//! the learner takes one projected stochastic-approximation step toward the
//! root, using the newly observed first-attempt round trip and the previous
//! epoch's failure tail. A virtual debt queue accumulates violations of the
//! sampling-frequency budget and lifts the threshold through the multiplier
//! `nu = u / v` until the budget holds on average. An optional momentum
//! variant averages update directions geometrically to damp heavy-tailed
//! noise; with weight `a = 1` it reproduces the plain iteration exactly.
//!
//! Projection bounds come from closed-form envelopes of the optimal point in
//! terms of simple moment priors; with exact moments for a degenerate channel
//! the bounds pinch to the optimum itself.

use crate::channel::{analytic_moments, ChannelParams};
use crate::error::{Error, Result};

/// Projection interval for the threshold iterate plus the two channel
/// constants the step size and the regret bound need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaBounds {
    pub gamma_lb: f64,
    pub gamma_ub: f64,
    /// Lower bound on the mean zero-wait epoch length; sets the step size.
    pub d_bar_lb: f64,
    /// Upper bound on any epoch length; infinite when unknown.
    pub l_ub: f64,
}

impl GammaBounds {
    pub fn new(gamma_lb: f64, gamma_ub: f64, d_bar_lb: f64, l_ub: f64) -> Result<Self> {
        if !(gamma_lb.is_finite() && gamma_ub.is_finite() && gamma_lb >= 0.0)
            || gamma_lb > gamma_ub
        {
            return Err(Error::InconsistentBounds {
                lb: gamma_lb,
                ub: gamma_ub,
            });
        }
        if !(d_bar_lb.is_finite() && d_bar_lb > 0.0) {
            return Err(Error::invalid(format!(
                "mean-length lower bound must be positive and finite, got {d_bar_lb}"
            )));
        }
        if l_ub < gamma_ub {
            return Err(Error::invalid(format!(
                "epoch-length upper bound {l_ub} is below the threshold bound {gamma_ub}"
            )));
        }
        Ok(Self {
            gamma_lb,
            gamma_ub,
            d_bar_lb,
            l_ub,
        })
    }

    pub fn clamp(&self, gamma: f64) -> f64 {
        gamma.clamp(self.gamma_lb, self.gamma_ub)
    }
}

/// Moment priors the sampler is assumed to know before any data arrive.
/// Each pair brackets the true mean; `h2_ub` bounds the second moment of a
/// full zero-wait epoch length `D^F + D^B + D^v`. Support and attempt bounds
/// may be infinite, in which case the epoch-length bound is too.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentPriors {
    pub mean_df_lb: f64,
    pub mean_df_ub: f64,
    pub mean_db_lb: f64,
    pub mean_db_ub: f64,
    pub mean_dv_lb: f64,
    pub mean_dv_ub: f64,
    pub h2_ub: f64,
    pub df_sup: f64,
    pub db_sup: f64,
    pub m_ub: f64,
}

impl MomentPriors {
    /// Exact priors: every bracket collapses to the true moment.
    pub fn exact(params: &ChannelParams) -> Self {
        let m = analytic_moments(params);
        let h2 = m.m2_da + 2.0 * m.mean_da * m.mean_dv + m.m2_dv;
        MomentPriors {
            mean_df_lb: m.mean_df,
            mean_df_ub: m.mean_df,
            mean_db_lb: m.mean_db,
            mean_db_ub: m.mean_db,
            mean_dv_lb: m.mean_dv,
            mean_dv_ub: m.mean_dv,
            h2_ub: h2,
            df_sup: params.fwd().upper_support().unwrap_or(f64::INFINITY),
            db_sup: params.bwd().upper_support().unwrap_or(f64::INFINITY),
            m_ub: params.m_cap().map_or(f64::INFINITY, |c| c as f64),
        }
    }

    /// Exact priors widened by a multiplicative factor, for experiments where
    /// the sampler should not start with the answer in hand.
    pub fn loosened(params: &ChannelParams, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 1.0) {
            return Err(Error::invalid(format!(
                "loosening factor must be at least 1, got {factor}"
            )));
        }
        let e = Self::exact(params);
        // A mean bound never exceeds the support, so bounded delays keep
        // their support as the ceiling.
        Ok(MomentPriors {
            mean_df_lb: e.mean_df_lb / factor,
            mean_df_ub: (e.mean_df_ub * factor).min(e.df_sup),
            mean_db_lb: e.mean_db_lb / factor,
            mean_db_ub: (e.mean_db_ub * factor).min(e.db_sup),
            mean_dv_lb: e.mean_dv_lb / factor,
            mean_dv_ub: e.mean_dv_ub * factor,
            h2_ub: e.h2_ub * factor * factor,
            ..e
        })
    }

    fn validate(&self) -> Result<()> {
        let pairs = [
            (self.mean_df_lb, self.mean_df_ub, "forward mean"),
            (self.mean_db_lb, self.mean_db_ub, "backward mean"),
            (self.mean_dv_lb, self.mean_dv_ub, "failure-tail mean"),
        ];
        for (lb, ub, what) in pairs {
            if !(lb.is_finite() && ub.is_finite() && 0.0 <= lb && lb <= ub) {
                return Err(Error::invalid(format!(
                    "{what} prior needs 0 <= lb <= ub finite, got [{lb}, {ub}]"
                )));
            }
        }
        if !(self.h2_ub.is_finite() && self.h2_ub > 0.0) {
            return Err(Error::invalid(format!(
                "second-moment prior must be positive and finite, got {}",
                self.h2_ub
            )));
        }
        if self.df_sup < self.mean_df_ub || self.db_sup < self.mean_db_ub || self.m_ub < 1.0 {
            return Err(Error::invalid(
                "support or attempt bounds contradict the mean priors".to_string(),
            ));
        }
        Ok(())
    }
}

/// Projection bounds for the threshold iterate from moment priors.
///
/// The lower bound is half the mean first-attempt round trip minus the
/// failure-tail mean, floored at zero; the upper bound divides the
/// second-moment envelope (budget terms included) by the shortest possible
/// mean epoch. An infinite `f_max` drops the budget terms.
pub fn gamma_bounds_from_priors(priors: &MomentPriors, f_max: f64) -> Result<GammaBounds> {
    priors.validate()?;
    if !(f_max > 0.0) {
        return Err(Error::invalid(format!(
            "frequency budget must be positive, got {f_max}"
        )));
    }
    let inv_f = if f_max.is_finite() { 1.0 / f_max } else { 0.0 };
    let gamma_lb =
        (0.5 * (priors.mean_df_lb + priors.mean_db_lb - priors.mean_dv_ub)).max(0.0);
    let d_lb = priors.mean_df_lb + priors.mean_db_lb + priors.mean_dv_lb;
    let d_ub = priors.mean_df_ub + priors.mean_db_ub + priors.mean_dv_ub;
    if d_lb <= 0.0 {
        return Err(Error::invalid(
            "mean priors give a zero-length epoch; channel is degenerate".to_string(),
        ));
    }
    let gamma_ub =
        (0.5 * priors.h2_ub + d_ub * inv_f + inv_f * inv_f) / (d_lb + inv_f) - priors.mean_dv_lb;
    let sup_rtt = priors.df_sup + priors.db_sup;
    let l_ub = if priors.m_ub.is_finite() && sup_rtt.is_finite() {
        gamma_ub + priors.m_ub * sup_rtt
    } else {
        f64::INFINITY
    };
    GammaBounds::new(gamma_lb, gamma_ub, d_lb, l_ub)
}

/// Per-epoch objective whose conditional mean crosses zero at the optimal
/// threshold: with `theta = gamma + nu`,
/// `g = max{d_a, theta}^2 / 2 - gamma (max{d_a, theta} + d_v)`.
/// Pathwise it is non-increasing and concave in `gamma`.
pub fn eval_g(gamma: f64, nu: f64, d_a: f64, d_v: f64) -> f64 {
    let reach = d_a.max(gamma + nu);
    0.5 * reach * reach - gamma * (reach + d_v)
}

/// Robbins-Monro step size: `1 / (2 d_bar_lb)` on the first update, then
/// `1 / ((k + 2) d_bar_lb)`.
pub fn step_size(k: u64, d_bar_lb: f64) -> f64 {
    debug_assert!(k >= 1);
    if k == 1 {
        1.0 / (2.0 * d_bar_lb)
    } else {
        1.0 / ((k + 2) as f64 * d_bar_lb)
    }
}

/// Geometric averaging of update directions: `(1 - a) d_prev + a b_k`.
pub fn momentum_step(d_prev: f64, a: f64, b_k: f64) -> f64 {
    (1.0 - a) * d_prev + a * b_k
}

/// State of the online learner between acknowledgments.
///
/// Fields are public for inspection and tracing; all mutation goes through
/// [`begin_epoch_update`], which maintains the invariants `gamma` within
/// bounds, `u >= 0`, `nu = u / v`, and `m >= mu^2` up to rounding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerState {
    /// Number of updates taken so far.
    pub k: u64,
    /// Threshold iterate, always inside the projection interval.
    pub gamma: f64,
    /// Running mean of observed failure-tail lengths.
    pub mu: f64,
    /// Running mean of their squares.
    pub m: f64,
    /// Frequency debt.
    pub u: f64,
    /// Budget multiplier `u / v`.
    pub nu: f64,
    /// Debt-to-multiplier scale.
    pub v: f64,
    /// Averaged update direction (used only by the momentum variant).
    pub d: f64,
    /// Momentum weight in (0, 1]; `None` runs the plain iteration.
    pub momentum_a: Option<f64>,
    pub bounds: GammaBounds,
}

impl LearnerState {
    pub fn new(
        bounds: GammaBounds,
        v: f64,
        gamma0: f64,
        momentum_a: Option<f64>,
    ) -> Result<Self> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::invalid(format!(
                "debt scale must be positive and finite, got {v}"
            )));
        }
        if let Some(a) = momentum_a {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::invalid(format!(
                    "momentum weight must lie in (0, 1], got {a}"
                )));
            }
        }
        if !gamma0.is_finite() {
            return Err(Error::invalid(format!(
                "starting threshold must be finite, got {gamma0}"
            )));
        }
        Ok(LearnerState {
            k: 0,
            gamma: bounds.clamp(gamma0),
            mu: 0.0,
            m: 0.0,
            u: 0.0,
            nu: 0.0,
            v,
            d: 0.0,
            momentum_a,
            bounds,
        })
    }

    /// Current waiting threshold `gamma + nu`.
    pub fn theta(&self) -> f64 {
        self.gamma + self.nu
    }
}

/// What the learner sees at one acknowledgment: the round trip of the attempt
/// that just opened epoch `k`, and the completed record of epoch `k - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckObservation {
    /// First-attempt round trip of the newly opened epoch.
    pub d_a_new: f64,
    /// Failure tail of the closed epoch.
    pub d_v_prev: f64,
    /// Attempts in the closed epoch.
    pub m_prev: u64,
    /// First-attempt round trip of the closed epoch.
    pub d_a_prev: f64,
    /// Waiting time used in the closed epoch.
    pub w_prev: f64,
}

/// One learning step, called once per acknowledgment after the first.
///
/// In order: the update counter advances; the closed epoch's failure tail
/// enters the running moments; the debt absorbs the closed epoch's budget
/// violation and refreshes `nu`; the update direction combines the objective
/// at the old iterate with the noise recentering `m/2 - mu^2`; and the
/// iterate moves by the current step size, projected back into bounds.
pub fn begin_epoch_update(
    state: &LearnerState,
    obs: &AckObservation,
    f_max: f64,
) -> LearnerState {
    let mut next = *state;
    next.k = state.k + 1;
    let k = next.k as f64;

    next.mu = state.mu + (obs.d_v_prev - state.mu) / k;
    next.m = state.m + (obs.d_v_prev * obs.d_v_prev - state.m) / k;

    let budget = if f_max.is_finite() {
        obs.m_prev as f64 / f_max
    } else {
        0.0
    };
    let l_prev = obs.d_a_prev + obs.w_prev + obs.d_v_prev;
    next.u = (state.u + budget - l_prev).max(0.0);
    next.nu = next.u / next.v;

    let n_k = 0.5 * next.m - next.mu * next.mu;
    let b_k = eval_g(state.gamma, next.nu, obs.d_a_new, obs.d_v_prev) + n_k;
    // The geometric average seeds from the first observation, not from zero:
    // a zero seed would stall the iterate for roughly 1/a epochs.
    next.d = match state.momentum_a {
        Some(a) if state.k > 0 => momentum_step(state.d, a, b_k),
        _ => b_k,
    };
    let eta = step_size(next.k, state.bounds.d_bar_lb);
    next.gamma = state.bounds.clamp(state.gamma + eta * next.d);
    next
}
