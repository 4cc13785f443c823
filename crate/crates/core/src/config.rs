//! JSON run descriptions.
//!
//! A run file names the channel, the policy, the horizon, and optionally an
//! ensemble block; everything else has defaults. Reference values for regret
//! and squared-error columns may be literal numbers or the string `"oracle"`,
//! in which case the caller solves the offline problem first and passes the
//! solution in during resolution. Unknown fields are rejected so typos fail
//! loudly instead of silently running a default.

use std::path::Path;

use serde::Deserialize;

use crate::analysis::EnsembleSpec;
use crate::channel::{ChannelParams, DelayDistribution, DelayKind, TruncationMode};
use crate::error::{Error, Result};
use crate::learner::MomentPriors;
use crate::oracle::{solve_constrained, OracleSolution};
use crate::policy::PolicySpec;
use crate::simulator::{Gamma0, RunConfig};

/// One delay distribution: a base law plus optional floor and truncation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayFile {
    #[serde(flatten)]
    pub kind: DelayKind,
    #[serde(default)]
    pub epsilon_floor: Option<f64>,
    /// Absolute truncation bound.
    #[serde(default)]
    pub truncate_at: Option<f64>,
    /// Truncation bound given as a quantile of the base law.
    #[serde(default)]
    pub truncate_quantile: Option<f64>,
    #[serde(default)]
    pub truncation_mode: TruncationMode,
}

impl DelayFile {
    pub fn resolve(&self) -> Result<DelayDistribution> {
        let mut d = DelayDistribution::new(self.kind)?;
        if let Some(eps) = self.epsilon_floor {
            d = d.with_epsilon_floor(eps)?;
        }
        let cap = match (self.truncate_at, self.truncate_quantile) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "give either truncate_at or truncate_quantile, not both".to_string(),
                ));
            }
            (Some(at), None) => Some(at),
            (None, Some(q)) => {
                if !(0.0 < q && q < 1.0) {
                    return Err(Error::invalid(format!(
                        "truncation quantile must lie in (0, 1), got {q}"
                    )));
                }
                Some(d.quantile(q))
            }
            (None, None) => None,
        };
        if let Some(cap) = cap {
            d = d.with_truncation(cap, self.truncation_mode)?;
        }
        Ok(d)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub alpha: f64,
    pub forward: DelayFile,
    pub backward: DelayFile,
    #[serde(default)]
    pub attempt_cap: Option<u64>,
}

impl ChannelFile {
    pub fn resolve(&self) -> Result<ChannelParams> {
        let mut params =
            ChannelParams::new(self.alpha, self.forward.resolve()?, self.backward.resolve()?)?;
        if let Some(cap) = self.attempt_cap {
            params = params.with_attempt_cap(Some(cap))?;
        }
        Ok(params)
    }
}

/// Projection priors: exact channel moments, exact moments loosened by a
/// factor, or explicit numbers.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorsFile {
    Exact,
    Loosened(f64),
    Explicit(ExplicitPriors),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPriors {
    pub mean_df_lb: f64,
    pub mean_df_ub: f64,
    pub mean_db_lb: f64,
    pub mean_db_ub: f64,
    pub mean_dv_lb: f64,
    pub mean_dv_ub: f64,
    pub h2_ub: f64,
    #[serde(default = "infinity")]
    pub df_sup: f64,
    #[serde(default = "infinity")]
    pub db_sup: f64,
    #[serde(default = "infinity")]
    pub m_ub: f64,
}

fn infinity() -> f64 {
    f64::INFINITY
}

impl PriorsFile {
    pub fn resolve(&self, params: &ChannelParams) -> Result<MomentPriors> {
        match self {
            PriorsFile::Exact => Ok(MomentPriors::exact(params)),
            PriorsFile::Loosened(factor) => MomentPriors::loosened(params, *factor),
            PriorsFile::Explicit(p) => Ok(MomentPriors {
                mean_df_lb: p.mean_df_lb,
                mean_df_ub: p.mean_df_ub,
                mean_db_lb: p.mean_db_lb,
                mean_db_ub: p.mean_db_ub,
                mean_dv_lb: p.mean_dv_lb,
                mean_dv_ub: p.mean_dv_ub,
                h2_ub: p.h2_ub,
                df_sup: p.df_sup,
                db_sup: p.db_sup,
                m_ub: p.m_ub,
            }),
        }
    }
}

/// A literal number or the string `"oracle"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefValue {
    Number(f64),
    Oracle,
}

impl<'de> Deserialize<'de> for RefValue {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Named(String),
        }
        match Raw::deserialize(de)? {
            Raw::Number(x) => Ok(RefValue::Number(x)),
            Raw::Named(s) if s == "oracle" => Ok(RefValue::Oracle),
            Raw::Named(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"oracle\", got {s:?}"
            ))),
        }
    }
}

impl RefValue {
    fn resolve(self, oracle: Option<&OracleSolution>, pick: fn(&OracleSolution) -> f64) -> Result<f64> {
        match self {
            RefValue::Number(x) => Ok(x),
            RefValue::Oracle => oracle.map(pick).ok_or_else(|| {
                Error::invalid(
                    "reference says \"oracle\" but no offline solution was provided".to_string(),
                )
            }),
        }
    }
}

/// Offline solver settings.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    #[serde(default = "default_oracle_samples")]
    pub samples: u64,
    #[serde(default = "default_oracle_tol")]
    pub tol: f64,
    /// Optional brute-force grid for cross-checking the solver.
    #[serde(default)]
    pub grid: Option<GridFile>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub theta_max: f64,
    pub step: f64,
    #[serde(default = "default_oracle_samples")]
    pub samples: u64,
}

impl Default for OracleFile {
    fn default() -> Self {
        OracleFile {
            samples: default_oracle_samples(),
            tol: default_oracle_tol(),
            grid: None,
        }
    }
}

fn default_oracle_samples() -> u64 {
    1_000_000
}

fn default_oracle_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub n_seeds: u64,
    pub checkpoints: Vec<u64>,
    /// Variants run under shared seeds; defaults to the run's own policy.
    #[serde(default)]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub gamma_ref: Option<RefValue>,
    #[serde(default)]
    pub aoi_ref: Option<RefValue>,
}

/// Top-level run description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub channel: ChannelFile,
    pub policy: PolicySpec,
    pub horizon_epochs: u64,
    /// Mean sampling-frequency budget; absent or null means unconstrained.
    #[serde(default)]
    pub f_max: Option<f64>,
    #[serde(default = "default_v")]
    pub v: f64,
    pub seed: u64,
    /// Absent means the prior-free observation phase.
    #[serde(default)]
    pub priors: Option<PriorsFile>,
    #[serde(default = "default_observe_epochs")]
    pub observe_epochs: u64,
    #[serde(default = "default_bounds_cap_factor")]
    pub bounds_cap_factor: f64,
    #[serde(default = "default_momentum_a")]
    pub momentum_a: f64,
    #[serde(default)]
    pub gamma0: Gamma0,
    #[serde(default = "default_trace_stride")]
    pub trace_stride: u64,
    #[serde(default)]
    pub extra_trace_epochs: Vec<u64>,
    #[serde(default = "default_true")]
    pub include_warmup: bool,
    #[serde(default)]
    pub aoi_ref: Option<RefValue>,
    #[serde(default)]
    pub oracle: OracleFile,
    #[serde(default)]
    pub ensemble: Option<EnsembleFile>,
}

fn default_v() -> f64 {
    1.0
}

fn default_observe_epochs() -> u64 {
    100
}

fn default_bounds_cap_factor() -> f64 {
    10.0
}

fn default_momentum_a() -> f64 {
    0.005
}

fn default_trace_stride() -> u64 {
    1
}

fn default_true() -> bool {
    true
}

pub fn parse_run_file(json: &str) -> Result<RunFile> {
    Ok(serde_json::from_str(json)?)
}

pub fn load_run_file(path: &Path) -> Result<RunFile> {
    parse_run_file(&std::fs::read_to_string(path)?)
}

impl RunFile {
    pub fn f_max(&self) -> f64 {
        self.f_max.unwrap_or(f64::INFINITY)
    }

    /// Whether any reference asks for the offline solution.
    pub fn wants_oracle(&self) -> bool {
        let is_oracle = |r: &Option<RefValue>| matches!(r, Some(RefValue::Oracle));
        is_oracle(&self.aoi_ref)
            || self.ensemble.as_ref().is_some_and(|e| {
                is_oracle(&e.gamma_ref) || is_oracle(&e.aoi_ref)
            })
    }

    /// Solves the offline problem with this file's solver settings.
    pub fn solve_oracle(&self) -> Result<OracleSolution> {
        let params = self.channel.resolve()?;
        solve_constrained(
            &params,
            self.f_max(),
            self.oracle.samples,
            self.oracle.tol,
        )
    }

    /// Builds the simulation configuration. `oracle` is only needed when a
    /// reference value says `"oracle"`.
    pub fn to_run_config(&self, oracle: Option<&OracleSolution>) -> Result<RunConfig> {
        let params = self.channel.resolve()?;
        let priors = self
            .priors
            .as_ref()
            .map(|p| p.resolve(&params))
            .transpose()?;
        let aoi_ref = self
            .aoi_ref
            .map(|r| r.resolve(oracle, |o| o.aoi_opt))
            .transpose()?;
        Ok(RunConfig {
            channel: params,
            policy: self.policy,
            horizon_epochs: self.horizon_epochs,
            f_max: self.f_max(),
            v: self.v,
            seed: self.seed,
            priors,
            observe_epochs: self.observe_epochs,
            bounds_cap_factor: self.bounds_cap_factor,
            momentum_a: self.momentum_a,
            gamma0: self.gamma0,
            trace_stride: self.trace_stride,
            extra_trace_epochs: self.extra_trace_epochs.clone(),
            include_warmup: self.include_warmup,
            aoi_ref,
        })
    }

    /// Builds the ensemble specification, when the file has one.
    pub fn to_ensemble_spec(&self, oracle: Option<&OracleSolution>) -> Result<Option<EnsembleSpec>> {
        let Some(e) = &self.ensemble else {
            return Ok(None);
        };
        let base = self.to_run_config(oracle)?;
        let policies = if e.policies.is_empty() {
            vec![self.policy]
        } else {
            e.policies.clone()
        };
        let gamma_ref = e
            .gamma_ref
            .map(|r| r.resolve(oracle, |o| o.gamma_star))
            .transpose()?;
        let aoi_ref = e
            .aoi_ref
            .map(|r| r.resolve(oracle, |o| o.aoi_opt))
            .transpose()?;
        Ok(Some(EnsembleSpec {
            base,
            policies,
            n_seeds: e.n_seeds,
            checkpoints: e.checkpoints.clone(),
            gamma_ref,
            aoi_ref,
        }))
    }
}
