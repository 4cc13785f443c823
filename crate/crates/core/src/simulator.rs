//! Epoch-level simulation with exact age accounting.
//!
//! A run starts with the first sample at time zero. The warm-up phase covers
//! the geometric run of failures before the first success; the first renewal
//! epoch opens with the attempt that delivers. Epoch `k` contributes the age
//! area `F_k = d_f L_{k-1} + L_k^2 / 2`, where `d_f` is the forward delay of
//! its opening attempt: the age climbs from `L_{k-1}` until that delivery,
//! resets to `d_f`, and climbs to `L_k` by the next delivery. Summed with the
//! pre-delivery triangle `L_0^2 / 2` this reproduces the exact pathwise
//! integral of the age, which an event-level integration cross-checks in the
//! test suite.
//!
//! The online policy updates once per acknowledgment after the first: the new
//! epoch's first round trip is observed, the closed epoch's failure tail
//! enters the running moments and the debt queue, and only then is the new
//! waiting time chosen with the refreshed threshold.
//!
//! Every epoch draws from its own seed-keyed stream, so two runs with equal
//! seeds see identical delays regardless of policy; all paired comparisons in
//! the analysis layer rely on this.

use serde::{Deserialize, Serialize};

use crate::channel::{analytic_moments, sample_epoch, ChannelParams, EpochOutcome};
use crate::error::{Error, Result};
use crate::learner::{
    begin_epoch_update, gamma_bounds_from_priors, AckObservation, GammaBounds, LearnerState,
    MomentPriors,
};
use crate::oracle::OracleSolution;
use crate::policy::{constant_wait_from_moments, waiting_time, Policy, PolicySpec};
use crate::rng::{epoch_rng, unit_open, INIT_STREAM};

/// Starting point for the threshold iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma0 {
    /// Zero, projected onto the bounds (their lower edge in practice).
    #[default]
    ProjectedZero,
    /// An explicit value, projected onto the bounds.
    Value(f64),
    /// Uniform draw over the projection interval, from the run's init stream.
    UniformRandom,
}

/// Everything one simulation run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub channel: ChannelParams,
    pub policy: PolicySpec,
    pub horizon_epochs: u64,
    /// Mean sampling-frequency budget; infinite means unconstrained.
    pub f_max: f64,
    /// Debt-to-multiplier scale of the learner.
    pub v: f64,
    pub seed: u64,
    /// Moment priors for the projection bounds. `None` runs a prior-free
    /// observation phase instead.
    pub priors: Option<MomentPriors>,
    /// Zero-wait epochs observed before engaging the learner when no priors
    /// are given.
    pub observe_epochs: u64,
    /// Upper projection bound in the prior-free mode, as a multiple of the
    /// observed mean epoch length.
    pub bounds_cap_factor: f64,
    /// Momentum weight used by the momentum policy variant.
    pub momentum_a: f64,
    pub gamma0: Gamma0,
    /// Emit a trace row every `trace_stride` epochs.
    pub trace_stride: u64,
    /// Additional epoch indices to trace regardless of the stride.
    pub extra_trace_epochs: Vec<u64>,
    /// Whether averages and regrets count the warm-up and the first epoch.
    /// When `false` the accounting starts at the second epoch's opening,
    /// where the age process first has its stationary start.
    pub include_warmup: bool,
    /// Reference age for the trace's running-regret column.
    pub aoi_ref: Option<f64>,
}

impl RunConfig {
    pub fn new(channel: ChannelParams, policy: PolicySpec, horizon_epochs: u64, seed: u64) -> Self {
        RunConfig {
            channel,
            policy,
            horizon_epochs,
            f_max: f64::INFINITY,
            v: 1.0,
            seed,
            priors: None,
            observe_epochs: 100,
            bounds_cap_factor: 10.0,
            momentum_a: 0.005,
            gamma0: Gamma0::ProjectedZero,
            trace_stride: 1,
            extra_trace_epochs: Vec::new(),
            include_warmup: true,
            aoi_ref: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon_epochs < 1 {
            return Err(Error::invalid("horizon must be at least one epoch"));
        }
        if self.trace_stride < 1 {
            return Err(Error::invalid("trace stride must be at least 1"));
        }
        if !(self.f_max > 0.0) {
            return Err(Error::invalid(format!(
                "frequency budget must be positive, got {}",
                self.f_max
            )));
        }
        if self.policy.is_online() && self.priors.is_none() && self.observe_epochs < 1 {
            return Err(Error::invalid(
                "prior-free mode needs at least one observation epoch".to_string(),
            ));
        }
        if !(self.bounds_cap_factor.is_finite() && self.bounds_cap_factor >= 1.0) {
            return Err(Error::invalid(format!(
                "bounds cap factor must be at least 1, got {}",
                self.bounds_cap_factor
            )));
        }
        Ok(())
    }
}

/// One traced epoch. Cumulative columns are physical: counted from time zero
/// with the warm-up included. Derived columns (`interval_mean`, `regret`)
/// follow the run's warm-up convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    /// Learner iterate after this epoch's update; empty for baselines and
    /// during the observation phase.
    pub gamma: Option<f64>,
    pub nu: Option<f64>,
    pub u: Option<f64>,
    pub m: u64,
    pub d_f: f64,
    pub d_a: f64,
    pub d_v: f64,
    pub w: f64,
    pub l: f64,
    /// Age area contributed by this epoch.
    pub f: f64,
    /// Time at this epoch's close, from time zero.
    pub s_next: f64,
    /// Age area accumulated from time zero.
    pub cum_aoi: f64,
    /// Samples sent so far, warm-up failures included.
    pub samples: u64,
    /// Mean time between samples under the run's warm-up convention.
    pub interval_mean: f64,
    /// Running `area - aoi_ref * time` under the run's warm-up convention.
    pub regret: Option<f64>,
}

/// What happened before the first successful delivery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupStats {
    /// Failed attempts before the first success.
    pub failures: u64,
    /// Time consumed by those failures; the first epoch opens here.
    pub l0: f64,
    /// Age area of the pre-delivery segment, `l0^2 / 2`.
    pub area: f64,
    /// First epoch's age area, length, and attempt count, kept so cumulative
    /// columns can be re-based onto the post-warm-up convention.
    pub f_1: f64,
    pub l_1: f64,
    pub m_1: u64,
}

/// End-of-run summary under the run's warm-up convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub time_avg_aoi: f64,
    pub mean_sampling_interval: f64,
    pub final_gamma: Option<f64>,
    pub final_nu: Option<f64>,
    pub final_theta: Option<f64>,
    pub regret_final: Option<f64>,
    pub total_epochs: u64,
    pub total_samples: u64,
    pub total_time: f64,
    pub warmup_failures: u64,
    pub warmup_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub rows: Vec<TraceRow>,
    pub summary: RunSummary,
    pub warmup: WarmupStats,
    pub include_warmup: bool,
}

impl RunResult {
    /// Cumulative `(area, time, samples)` at a traced row under the run's
    /// warm-up convention; `None` when the convention excludes everything the
    /// row has seen so far.
    pub fn cumulative_at(&self, row: &TraceRow) -> Option<(f64, f64, u64)> {
        cumulative(
            self.include_warmup,
            &self.warmup,
            row.k,
            row.cum_aoi,
            row.s_next,
            row.samples,
        )
    }
}

fn cumulative(
    include_warmup: bool,
    warmup: &WarmupStats,
    k: u64,
    cum_aoi: f64,
    s_next: f64,
    samples: u64,
) -> Option<(f64, f64, u64)> {
    if include_warmup {
        Some((cum_aoi, s_next, samples))
    } else if k >= 2 {
        Some((
            cum_aoi - warmup.area - warmup.f_1,
            s_next - warmup.l0 - warmup.l_1,
            samples - warmup.failures - warmup.m_1,
        ))
    } else {
        None
    }
}

/// Age area of one epoch: the age climbs from `l_prev`, resets to `d_f_first`
/// at the delivery, and climbs to `l_curr` by the epoch's close.
pub fn epoch_aoi(d_f_first: f64, l_prev: f64, l_curr: f64) -> f64 {
    d_f_first * l_prev + 0.5 * l_curr * l_curr
}

/// Running regret of a finished run against an offline solution: for every
/// traced row, the accumulated age area minus `aoi_opt` times the accumulated
/// time, under the run's warm-up convention.
pub fn regret(result: &RunResult, oracle: &OracleSolution) -> Vec<(u64, f64)> {
    result
        .rows
        .iter()
        .filter_map(|row| {
            result
                .cumulative_at(row)
                .map(|(area, time, _)| (row.k, area - oracle.aoi_opt * time))
        })
        .collect()
}

enum Mode {
    Baseline(Policy),
    Online {
        learner: Option<LearnerState>,
        momentum: Option<f64>,
        observed_len: f64,
    },
}

fn resolve_gamma0(gamma0: Gamma0, bounds: &GammaBounds, seed: u64) -> f64 {
    match gamma0 {
        Gamma0::ProjectedZero => 0.0,
        Gamma0::Value(x) => x,
        Gamma0::UniformRandom => {
            let mut rng = epoch_rng(seed, INIT_STREAM);
            bounds.gamma_lb + unit_open(&mut rng) * (bounds.gamma_ub - bounds.gamma_lb)
        }
    }
}

struct PrevEpoch {
    m: u64,
    d_a: f64,
    w: f64,
    d_v: f64,
}

/// Runs one simulation.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let params = &config.channel;

    let mut mode = match config.policy {
        PolicySpec::ZeroWait => Mode::Baseline(Policy::ZeroWait),
        PolicySpec::ConstantWait => Mode::Baseline(constant_wait_from_moments(
            &analytic_moments(params),
            config.f_max,
        )),
        PolicySpec::FixedThreshold { theta } => Mode::Baseline(Policy::threshold(theta)?),
        PolicySpec::Online | PolicySpec::OnlineMomentum => {
            let momentum = match config.policy {
                PolicySpec::OnlineMomentum => Some(config.momentum_a),
                _ => None,
            };
            let learner = match &config.priors {
                Some(priors) => {
                    let bounds = gamma_bounds_from_priors(priors, config.f_max)?;
                    let g0 = resolve_gamma0(config.gamma0, &bounds, config.seed);
                    Some(LearnerState::new(bounds, config.v, g0, momentum)?)
                }
                None => None,
            };
            Mode::Online {
                learner,
                momentum,
                observed_len: 0.0,
            }
        }
    };

    // Warm-up: failures before the first success, capped like epoch attempts.
    let mut warm_rng = epoch_rng(config.seed, 0);
    let alpha = params.alpha();
    let mut failures = 0u64;
    let mut l0 = 0.0;
    loop {
        if let Some(cap) = params.m_cap() {
            if failures + 1 >= cap {
                break;
            }
        }
        if unit_open(&mut warm_rng) >= alpha {
            break;
        }
        l0 += params.fwd().draw(&mut warm_rng) + params.bwd().draw(&mut warm_rng);
        failures += 1;
    }
    let mut warmup = WarmupStats {
        failures,
        l0,
        area: 0.5 * l0 * l0,
        f_1: 0.0,
        l_1: 0.0,
        m_1: 0,
    };

    let mut extra = config.extra_trace_epochs.clone();
    extra.sort_unstable();

    let mut rows = Vec::new();
    let mut prev: Option<PrevEpoch> = None;
    let mut l_prev = l0;
    let mut cum_area = warmup.area;
    let mut time = l0;
    let mut samples = failures;

    for k in 1..=config.horizon_epochs {
        let mut out: EpochOutcome = sample_epoch(params, &mut epoch_rng(config.seed, k));
        out.index = k;

        // Learning step: consumes the closed epoch, sees the new round trip.
        if let (Mode::Online { learner: Some(state), .. }, Some(p)) = (&mut mode, &prev) {
            if k >= 2 {
                let obs = AckObservation {
                    d_a_new: out.d_a,
                    d_v_prev: p.d_v,
                    m_prev: p.m,
                    d_a_prev: p.d_a,
                    w_prev: p.w,
                };
                *state = begin_epoch_update(state, &obs, config.f_max);
            }
        }

        let w = match &mode {
            Mode::Baseline(policy) => waiting_time(*policy, out.d_a, true),
            Mode::Online { learner, .. } => match learner {
                Some(state) => {
                    waiting_time(Policy::Threshold { theta: state.theta() }, out.d_a, true)
                }
                None => 0.0,
            },
        };
        out.set_wait(w);

        let f_k = epoch_aoi(out.first_attempt.d_f, l_prev, out.l);
        cum_area += f_k;
        time += out.l;
        samples += out.m;
        if k == 1 {
            warmup.f_1 = f_k;
            warmup.l_1 = out.l;
            warmup.m_1 = out.m;
        }

        let traced = k % config.trace_stride == 0
            || k == config.horizon_epochs
            || extra.binary_search(&k).is_ok();
        if traced {
            let (gamma, nu, u) = match &mode {
                Mode::Online {
                    learner: Some(state),
                    ..
                } => (Some(state.gamma), Some(state.nu), Some(state.u)),
                _ => (None, None, None),
            };
            let mut row = TraceRow {
                k,
                gamma,
                nu,
                u,
                m: out.m,
                d_f: out.first_attempt.d_f,
                d_a: out.d_a,
                d_v: out.d_v,
                w: out.w,
                l: out.l,
                f: f_k,
                s_next: time,
                cum_aoi: cum_area,
                samples,
                interval_mean: f64::NAN,
                regret: None,
            };
            if let Some((area, t, s)) =
                cumulative(config.include_warmup, &warmup, k, cum_area, time, samples)
            {
                if s > 0 && t > 0.0 {
                    row.interval_mean = t / s as f64;
                }
                row.regret = config.aoi_ref.map(|a| area - a * t);
            }
            rows.push(row);
        }

        // Prior-free mode: engage the learner once enough zero-wait epochs
        // have calibrated the bounds. The state appears in the trace from the
        // next epoch on.
        if let Mode::Online {
            learner: learner @ None,
            momentum,
            observed_len,
        } = &mut mode
        {
            *observed_len += out.l;
            if k == config.observe_epochs {
                let mean_len = *observed_len / k as f64;
                if !(mean_len > 0.0) {
                    return Err(Error::invalid(
                        "observed epochs have zero length; channel is degenerate".to_string(),
                    ));
                }
                let bounds = GammaBounds::new(
                    0.0,
                    config.bounds_cap_factor * mean_len,
                    0.5 * mean_len,
                    f64::INFINITY,
                )?;
                let g0 = resolve_gamma0(config.gamma0, &bounds, config.seed);
                *learner = Some(LearnerState::new(bounds, config.v, g0, *momentum)?);
            }
        }

        prev = Some(PrevEpoch {
            m: out.m,
            d_a: out.d_a,
            w: out.w,
            d_v: out.d_v,
        });
        l_prev = out.l;
    }

    let (final_gamma, final_nu, final_theta) = match &mode {
        Mode::Online {
            learner: Some(state),
            ..
        } => (Some(state.gamma), Some(state.nu), Some(state.theta())),
        _ => (None, None, None),
    };

    let (time_avg_aoi, mean_sampling_interval, regret_final) = match cumulative(
        config.include_warmup,
        &warmup,
        config.horizon_epochs,
        cum_area,
        time,
        samples,
    ) {
        Some((area, t, s)) if t > 0.0 && s > 0 => (
            area / t,
            t / s as f64,
            config.aoi_ref.map(|a| area - a * t),
        ),
        _ => (f64::NAN, f64::NAN, None),
    };

    let summary = RunSummary {
        time_avg_aoi,
        mean_sampling_interval,
        final_gamma,
        final_nu,
        final_theta,
        regret_final,
        total_epochs: config.horizon_epochs,
        total_samples: samples,
        total_time: time,
        warmup_failures: warmup.failures,
        warmup_time: warmup.l0,
    };

    Ok(RunResult {
        rows,
        summary,
        warmup,
        include_warmup: config.include_warmup,
    })
}
