//! Simulation and online learning for age-of-information optimal sampling.
//!
//! A sensor samples a source and sends updates over a forward channel that
//! loses each update independently with probability `alpha`; receipt is
//! confirmed over a backward channel. Both directions add random delay. The
//! sampler may hold a fresh update before sending it, and the goal is to pick
//! waiting times that minimize the long-run time average of the age of
//! information at the receiver, optionally subject to a cap on the average
//! sampling frequency.
//!
//! The crate provides:
//!
//! * a channel model with exact per-epoch sampling and closed-form moments
//!   ([`channel`]),
//! * waiting policies and the threshold structure of the optimum ([`policy`]),
//! * a projected stochastic-approximation learner with a frequency debt queue
//!   and an optional momentum variant ([`learner`]),
//! * offline solvers that compute the optimal threshold by root finding or
//!   grid search ([`oracle`]),
//! * an epoch-level simulator with exact age accounting ([`simulator`]),
//! * ensemble drivers, decay-rate fits, and variance comparisons
//!   ([`analysis`]),
//! * CSV table and JSON config formats ([`table`], [`config`]).
//!
//! All randomness flows through counter-based generators keyed by a run seed
//! and an epoch index, so every result is reproducible bit for bit and
//! different policies can be compared on identical delay realizations.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod error;
pub mod learner;
pub mod normal;
pub mod oracle;
pub mod piecewise;
pub mod policy;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
