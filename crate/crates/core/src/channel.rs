//! Two-way lossy channel model and renewal epoch sampling.
//!
//! Each sampling attempt travels the forward channel (delay `D^F`), is lost
//! with probability `alpha`, and on delivery triggers an acknowledgment over
//! the backward channel (delay `D^B`). A lost update is detected after a full
//! round trip and resampled immediately, so the interval between consecutive
//! successful deliveries decomposes into one first-attempt round trip, the
//! chosen waiting time, and a geometric number of failed round trips.
//!
//! [`sample_epoch`] draws one such renewal epoch. [`analytic_moments`] gives
//! exact moments of every piece; the failure tail is compound geometric, whose
//! second moment uses the full law of the random per-attempt round trip, not
//! just its mean. The attempt cap is ignored by the closed forms, which is a
//! relative error of order `alpha^m_cap`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal::{normal_cdf, normal_quantile};
use crate::rng::unit_open;
use rand_chacha::rand_core::RngCore;

/// Base delay law before any floor shift or truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayKind {
    /// Point mass at `value`.
    Deterministic { value: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// `exp(mu + sigma Z)` for standard normal `Z`.
    LogNormal { mu: f64, sigma: f64 },
    /// Exponential with the given rate.
    Exponential { rate: f64 },
}

/// How an upper truncation bound is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationMode {
    /// Condition the law on staying at or below the bound. Implemented by
    /// restricting the quantile transform, which yields the same law as a
    /// rejection loop but consumes a fixed number of draws.
    #[default]
    Resample,
    /// Clip each draw at the bound, leaving an atom there.
    Clamp,
}

/// One-way delay distribution: a base law, an additive floor, and an optional
/// upper truncation. All parameters are validated at construction so that
/// drawing and moment evaluation never fail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayDistribution {
    kind: DelayKind,
    epsilon_floor: f64,
    truncation: Option<(f64, TruncationMode)>,
}

impl DelayDistribution {
    /// Validates and wraps a base law with no floor and no truncation.
    pub fn new(kind: DelayKind) -> Result<Self> {
        match kind {
            DelayKind::Deterministic { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(Error::invalid(format!(
                        "deterministic delay must be finite and nonnegative, got {value}"
                    )));
                }
            }
            DelayKind::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                    return Err(Error::invalid(format!(
                        "uniform delay needs 0 <= lo < hi, got [{lo}, {hi}]"
                    )));
                }
            }
            DelayKind::LogNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma > 0.0) {
                    return Err(Error::invalid(format!(
                        "log-normal delay needs finite mu and sigma > 0, got mu={mu}, sigma={sigma}"
                    )));
                }
            }
            DelayKind::Exponential { rate } => {
                if !(rate.is_finite() && rate > 0.0) {
                    return Err(Error::invalid(format!(
                        "exponential delay needs rate > 0, got {rate}"
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            epsilon_floor: 0.0,
            truncation: None,
        })
    }

    pub fn deterministic(value: f64) -> Result<Self> {
        Self::new(DelayKind::Deterministic { value })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(DelayKind::Uniform { lo, hi })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(DelayKind::LogNormal { mu, sigma })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        Self::new(DelayKind::Exponential { rate })
    }

    /// Adds a constant shift to every draw.
    pub fn with_epsilon_floor(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::invalid(format!(
                "epsilon floor must be finite and nonnegative, got {epsilon}"
            )));
        }
        self.epsilon_floor = epsilon;
        if let Some((upper, mode)) = self.truncation {
            // Re-validate: the cap applies to the shifted value.
            return self.with_truncation(upper, mode);
        }
        Ok(self)
    }

    /// Caps delivered values at `upper` (floor included) with the given mode.
    pub fn with_truncation(mut self, upper: f64, mode: TruncationMode) -> Result<Self> {
        if !upper.is_finite() {
            return Err(Error::invalid(format!(
                "truncation bound must be finite, got {upper}"
            )));
        }
        let cap = upper - self.epsilon_floor;
        if cap <= 0.0 {
            return Err(Error::invalid(format!(
                "truncation bound {upper} does not exceed the floor {}",
                self.epsilon_floor
            )));
        }
        if mode == TruncationMode::Resample && self.raw_cdf(cap) <= 0.0 {
            return Err(Error::invalid(format!(
                "resample truncation at {upper} leaves no probability mass"
            )));
        }
        self.truncation = Some((upper, mode));
        Ok(self)
    }

    pub fn kind(&self) -> DelayKind {
        self.kind
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    pub fn truncation(&self) -> Option<(f64, TruncationMode)> {
        self.truncation
    }

    /// CDF of the base law (no floor, no truncation).
    fn raw_cdf(&self, x: f64) -> f64 {
        match self.kind {
            DelayKind::Deterministic { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            DelayKind::Uniform { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            DelayKind::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    normal_cdf((x.ln() - mu) / sigma)
                }
            }
            DelayKind::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    /// Quantile of the base law, defined for `p` in the open interval.
    fn raw_quantile(&self, p: f64) -> f64 {
        match self.kind {
            DelayKind::Deterministic { value } => value,
            DelayKind::Uniform { lo, hi } => lo + (hi - lo) * p,
            DelayKind::LogNormal { mu, sigma } => (mu + sigma * normal_quantile(p)).exp(),
            DelayKind::Exponential { rate } => -(-p).ln_1p() / rate,
        }
    }

    /// Partial moments of the base law below `c`:
    /// `(P(X <= c), E[X 1{X <= c}], E[X^2 1{X <= c}])`.
    fn raw_partial_moments(&self, c: f64) -> (f64, f64, f64) {
        match self.kind {
            DelayKind::Deterministic { value } => {
                if c >= value {
                    (1.0, value, value * value)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
            DelayKind::Uniform { lo, hi } => {
                let b = c.min(hi);
                if b <= lo {
                    return (0.0, 0.0, 0.0);
                }
                let w = hi - lo;
                (
                    (b - lo) / w,
                    (b * b - lo * lo) / (2.0 * w),
                    (b * b * b - lo * lo * lo) / (3.0 * w),
                )
            }
            DelayKind::LogNormal { mu, sigma } => {
                if c <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let z = (c.ln() - mu) / sigma;
                let m1 = (mu + 0.5 * sigma * sigma).exp() * normal_cdf(z - sigma);
                let m2 = (2.0 * mu + 2.0 * sigma * sigma).exp() * normal_cdf(z - 2.0 * sigma);
                (normal_cdf(z), m1, m2)
            }
            DelayKind::Exponential { rate } => {
                if c <= 0.0 {
                    return (0.0, 0.0, 0.0);
                }
                let e = (-rate * c).exp();
                let f = 1.0 - e;
                let m1 = (1.0 - e * (1.0 + rate * c)) / rate;
                let m2 = (2.0 - e * (2.0 + 2.0 * rate * c + rate * rate * c * c)) / (rate * rate);
                (f, m1, m2)
            }
        }
    }

    /// First two moments of the base law with truncation applied, floor not
    /// yet added.
    fn truncated_raw_moments(&self) -> (f64, f64) {
        match self.truncation {
            None => match self.kind {
                DelayKind::Deterministic { value } => (value, value * value),
                DelayKind::Uniform { lo, hi } => {
                    ((lo + hi) / 2.0, (lo * lo + lo * hi + hi * hi) / 3.0)
                }
                DelayKind::LogNormal { mu, sigma } => (
                    (mu + 0.5 * sigma * sigma).exp(),
                    (2.0 * mu + 2.0 * sigma * sigma).exp(),
                ),
                DelayKind::Exponential { rate } => (1.0 / rate, 2.0 / (rate * rate)),
            },
            Some((upper, mode)) => {
                let c = upper - self.epsilon_floor;
                let (f, m1, m2) = self.raw_partial_moments(c);
                match mode {
                    TruncationMode::Resample => (m1 / f, m2 / f),
                    TruncationMode::Clamp => {
                        (m1 + c * (1.0 - f), m2 + c * c * (1.0 - f))
                    }
                }
            }
        }
    }

    /// Mean of a delivered delay.
    pub fn mean(&self) -> f64 {
        self.epsilon_floor + self.truncated_raw_moments().0
    }

    /// Second moment of a delivered delay.
    pub fn second_moment(&self) -> f64 {
        let (m1, m2) = self.truncated_raw_moments();
        let e = self.epsilon_floor;
        e * e + 2.0 * e * m1 + m2
    }

    /// Quantile of a delivered delay, truncation and floor included.
    pub fn quantile(&self, p: f64) -> f64 {
        let raw = match self.truncation {
            None => self.raw_quantile(p),
            Some((upper, mode)) => {
                let c = upper - self.epsilon_floor;
                match mode {
                    TruncationMode::Resample => self.raw_quantile(p * self.raw_cdf(c)),
                    TruncationMode::Clamp => self.raw_quantile(p).min(c),
                }
            }
        };
        self.epsilon_floor + raw
    }

    /// Least upper bound of the support, if finite.
    pub fn upper_support(&self) -> Option<f64> {
        let natural = match self.kind {
            DelayKind::Deterministic { value } => Some(value),
            DelayKind::Uniform { hi, .. } => Some(hi),
            DelayKind::LogNormal { .. } | DelayKind::Exponential { .. } => None,
        };
        match self.truncation {
            Some((upper, _)) => {
                let cap = upper - self.epsilon_floor;
                let raw = natural.map_or(cap, |n| n.min(cap));
                Some(self.epsilon_floor + raw)
            }
            None => natural.map(|n| self.epsilon_floor + n),
        }
    }

    /// One delay draw. Consumes exactly one 64-bit word from the stream for
    /// every kind and truncation mode, so draw positions stay aligned across
    /// distribution choices.
    pub fn draw(&self, rng: &mut impl RngCore) -> f64 {
        let u = unit_open(rng);
        let raw = match self.truncation {
            None => self.raw_quantile(u),
            Some((upper, mode)) => {
                let c = upper - self.epsilon_floor;
                match mode {
                    TruncationMode::Resample => self.raw_quantile(u * self.raw_cdf(c)),
                    TruncationMode::Clamp => self.raw_quantile(u).min(c),
                }
            }
        };
        self.epsilon_floor + raw
    }
}

/// Default cap on sampling attempts per epoch. Keeps a single epoch finite
/// under any loss rate; the closed-form moments ignore it, which biases them
/// by a factor of order `alpha^cap`.
pub const DEFAULT_ATTEMPT_CAP: u64 = 10_000;

/// Channel configuration: loss probability, both delay laws, attempt cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    alpha: f64,
    fwd: DelayDistribution,
    bwd: DelayDistribution,
    m_cap: Option<u64>,
}

impl ChannelParams {
    pub fn new(alpha: f64, fwd: DelayDistribution, bwd: DelayDistribution) -> Result<Self> {
        if !(alpha.is_finite() && (0.0..1.0).contains(&alpha)) {
            return Err(Error::invalid(format!(
                "loss probability must lie in [0, 1), got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            fwd,
            bwd,
            m_cap: Some(DEFAULT_ATTEMPT_CAP),
        })
    }

    /// Overrides the attempt cap; `None` removes it entirely.
    pub fn with_attempt_cap(mut self, m_cap: Option<u64>) -> Result<Self> {
        if let Some(cap) = m_cap {
            if cap < 1 {
                return Err(Error::invalid("attempt cap must be at least 1"));
            }
        }
        self.m_cap = m_cap;
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn fwd(&self) -> &DelayDistribution {
        &self.fwd
    }

    pub fn bwd(&self) -> &DelayDistribution {
        &self.bwd
    }

    pub fn m_cap(&self) -> Option<u64> {
        self.m_cap
    }

    /// Stable whitespace-free digest used to refuse cross-channel
    /// aggregation of persisted tables. FNV-1a over the parameter rendering.
    pub fn fingerprint(&self) -> String {
        let text = format!(
            "alpha={:?} fwd={:?} bwd={:?} m_cap={:?}",
            self.alpha, self.fwd, self.bwd, self.m_cap
        );
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in text.bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Delays of one sampling attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attempt {
    pub d_f: f64,
    pub d_b: f64,
}

impl Attempt {
    pub fn round_trip(&self) -> f64 {
        self.d_f + self.d_b
    }
}

/// Realized randomness of one renewal epoch.
///
/// The epoch opens with the successful attempt (`first_attempt`), after whose
/// acknowledgment the sampler waits `w`, and closes with `m - 1` failed
/// attempts, each costing a full round trip before the loss is detected.
/// `w` and `l` are filled in by the simulator once the policy has chosen the
/// waiting time; `sample_epoch` leaves them at zero, and leaves `index` at
/// zero for the caller to assign.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    /// Epoch number, assigned by the caller; 1-based in simulation runs.
    pub index: u64,
    /// The successful attempt that opens the epoch.
    pub first_attempt: Attempt,
    /// Round trips of the failed attempts at the end of the epoch.
    pub failed_attempts: Vec<Attempt>,
    /// Total attempts in the epoch: 1 success plus the failures.
    pub m: u64,
    /// First-attempt round trip `d_f + d_b`.
    pub d_a: f64,
    /// Summed round trips of the failed attempts.
    pub d_v: f64,
    /// Waiting time after the first attempt's acknowledgment.
    pub w: f64,
    /// Epoch length `d_a + w + d_v`.
    pub l: f64,
}

impl EpochOutcome {
    /// Recomputes the epoch length after the waiting time is known.
    pub fn set_wait(&mut self, w: f64) {
        self.w = w;
        self.l = self.d_a + w + self.d_v;
    }
}

/// Draws one renewal epoch from the given stream.
///
/// Draw order is the physical order of events: the successful attempt's two
/// delays, then for each potential failure one loss indicator followed by the
/// failed attempt's two delays. The number of attempts is `1 + G` for `G`
/// geometric with success probability `1 - alpha`, truncated at the attempt
/// cap.
pub fn sample_epoch(params: &ChannelParams, rng: &mut impl RngCore) -> EpochOutcome {
    let first = Attempt {
        d_f: params.fwd.draw(rng),
        d_b: params.bwd.draw(rng),
    };
    let mut failed = Vec::new();
    let mut m = 1u64;
    loop {
        if let Some(cap) = params.m_cap {
            if m >= cap {
                break;
            }
        }
        if unit_open(rng) >= params.alpha {
            break;
        }
        failed.push(Attempt {
            d_f: params.fwd.draw(rng),
            d_b: params.bwd.draw(rng),
        });
        m += 1;
    }
    let d_a = first.round_trip();
    let d_v: f64 = failed.iter().map(Attempt::round_trip).sum();
    EpochOutcome {
        index: 0,
        first_attempt: first,
        failed_attempts: failed,
        m,
        d_a,
        d_v,
        w: 0.0,
        l: d_a + d_v,
    }
}

/// Exact moments of the per-epoch quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelMoments {
    pub mean_df: f64,
    pub mean_db: f64,
    pub m2_df: f64,
    pub m2_db: f64,
    /// Mean of the first-attempt round trip `D^a = D^F + D^B`.
    pub mean_da: f64,
    pub m2_da: f64,
    /// Mean attempts per epoch, `1 / (1 - alpha)`.
    pub mean_m: f64,
    /// Mean of the failure tail `D^v`.
    pub mean_dv: f64,
    pub m2_dv: f64,
}

impl ChannelMoments {
    /// Second-moment noise constant `m2_dv / 2 - mean_dv^2` that recenters the
    /// per-epoch objective; nonnegative for every compound-geometric tail.
    pub fn n_const(&self) -> f64 {
        0.5 * self.m2_dv - self.mean_dv * self.mean_dv
    }
}

/// Closed-form moments of the epoch pieces.
///
/// The failure tail is a compound-geometric sum of `G` round trips with `G`
/// geometric on `{0, 1, ...}`. Its second moment is
/// `E[G] m2 + E[G(G-1)] mean^2` over the per-attempt round trip, which keeps
/// the within-attempt delay randomness. Collapsing each attempt to its mean
/// round trip would lose the `E[G] (m2 - mean^2)` term; for two unit-uniform
/// delays at `alpha = 1/2` the correct value is 19/6 where the collapsed one
/// is 15/6.
pub fn analytic_moments(params: &ChannelParams) -> ChannelMoments {
    let mean_df = params.fwd.mean();
    let mean_db = params.bwd.mean();
    let m2_df = params.fwd.second_moment();
    let m2_db = params.bwd.second_moment();
    let mean_da = mean_df + mean_db;
    let m2_da = m2_df + 2.0 * mean_df * mean_db + m2_db;
    let alpha = params.alpha;
    let mean_m = 1.0 / (1.0 - alpha);
    // Factorial moments of the geometric failure count.
    let e_g = alpha / (1.0 - alpha);
    let e_g2 = 2.0 * alpha * alpha / ((1.0 - alpha) * (1.0 - alpha));
    let mean_dv = e_g * mean_da;
    let m2_dv = e_g * m2_da + e_g2 * mean_da * mean_da;
    ChannelMoments {
        mean_df,
        mean_db,
        m2_df,
        m2_db,
        mean_da,
        m2_da,
        mean_m,
        mean_dv,
        m2_dv,
    }
}
