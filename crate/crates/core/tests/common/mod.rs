//! Shared test machinery: an event-level age integrator that never uses the
//! per-epoch area identity, and the randomized property suites that both the
//! property and acceptance targets run.
//!
//! Each integration target compiles this module separately and uses a
//! different subset of it.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use aoi_core::learner::{
    begin_epoch_update, eval_g, AckObservation, GammaBounds, LearnerState,
};
use aoi_core::simulator::RunResult;

/// Age area of one epoch integrated segment by segment: the age climbs from
/// `l_prev`, drops to `d_f` at the delivery, and climbs to `l` by the close.
pub fn epoch_event_area(d_f: f64, l_prev: f64, l: f64) -> f64 {
    let first = d_f * l_prev + 0.5 * d_f * d_f;
    let rest = (l - d_f) * 0.5 * (d_f + l);
    first + rest
}

/// Replays a stride-1 run event by event and integrates the age exactly,
/// returning `(area, time)` from time zero. Panics when rows are missing.
pub fn integrate_run(result: &RunResult) -> (f64, f64) {
    assert_eq!(
        result.rows.len() as u64,
        result.summary.total_epochs,
        "event integration needs a stride-1 trace"
    );
    let mut area = 0.5 * result.warmup.l0 * result.warmup.l0;
    let mut time = result.warmup.l0;
    let mut l_prev = result.warmup.l0;
    for (i, row) in result.rows.iter().enumerate() {
        assert_eq!(row.k, i as u64 + 1);
        area += epoch_event_area(row.d_f, l_prev, row.l);
        time += row.l;
        l_prev = row.l;
    }
    (area, time)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        max_shrink_iters: 200,
        ..Config::default()
    })
}

/// Pathwise sample of the update function: positive round trip, nonnegative
/// failure tail and multiplier.
fn g_inputs() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.01..50.0f64, 0.0..100.0f64, 0.0..20.0f64)
}

/// The update function never increases in `gamma`, whatever the multiplier.
pub fn suite_g_monotone(cases: u32) {
    runner(cases)
        .run(
            &(g_inputs(), 0.0..30.0f64, 0.01..10.0f64),
            |((d_a, d_v, nu), gamma, delta)| {
                let lo = eval_g(gamma, nu, d_a, d_v);
                let hi = eval_g(gamma + delta, nu, d_a, d_v);
                prop_assert!(
                    lo >= hi,
                    "g({gamma}) = {lo} < g({}) = {hi}",
                    gamma + delta
                );
                Ok(())
            },
        )
        .unwrap();
}

/// Without a frequency multiplier the update function is concave in `gamma`:
/// its waiting branch is quadratic with matching slope at the kink. (A
/// positive multiplier shifts the kink and makes it convex, so this suite
/// pins the unconstrained case, which is the one the root theory relies on.)
pub fn suite_g_concave_unconstrained(cases: u32) {
    runner(cases)
        .run(
            &(g_inputs(), 0.0..30.0f64, 0.01..10.0f64),
            |((d_a, d_v, _), g1, delta)| {
                let g2 = g1 + delta;
                let mid = 0.5 * (g1 + g2);
                let left = eval_g(g1, 0.0, d_a, d_v);
                let right = eval_g(g2, 0.0, d_a, d_v);
                let center = eval_g(mid, 0.0, d_a, d_v);
                let tol = 1e-12 * (1.0 + left.abs() + right.abs());
                prop_assert!(
                    center >= 0.5 * (left + right) - tol,
                    "midpoint {center} below chord {}",
                    0.5 * (left + right)
                );
                Ok(())
            },
        )
        .unwrap();
}

/// Observation stream feeding the learner. Failure tails are often zero,
/// matching loss-free acknowledgment runs.
fn observations() -> impl Strategy<Value = Vec<AckObservation>> {
    let one = (
        0.02..40.0f64,
        prop_oneof![Just(0.0), 0.0..120.0f64],
        1u64..20,
        0.02..40.0f64,
        0.0..30.0f64,
    )
        .prop_map(|(d_a_new, d_v_prev, m_prev, d_a_prev, w_prev)| AckObservation {
            d_a_new,
            d_v_prev,
            m_prev,
            d_a_prev,
            w_prev,
        });
    proptest::collection::vec(one, 1..12)
}

fn bounds_and_state() -> impl Strategy<Value = (GammaBounds, f64, f64)> {
    (
        0.0..5.0f64,
        0.1..50.0f64,
        0.05..5.0f64,
        0.0..100.0f64,
        0.1..100.0f64,
        -5.0..60.0f64,
    )
        .prop_map(|(lb, width, d_bar_lb, l_extra, v, gamma0)| {
            let ub = lb + width;
            let bounds = GammaBounds::new(lb, ub, d_bar_lb, ub + l_extra).unwrap();
            (bounds, v, gamma0)
        })
}

/// Every update keeps the iterate inside the projection interval, the debt
/// queue nonnegative, the multiplier exactly `u / v`, and the running second
/// moment at least the squared running mean.
pub fn suite_state_invariants(cases: u32) {
    runner(cases)
        .run(
            &(
                bounds_and_state(),
                observations(),
                prop_oneof![Just(f64::INFINITY), 0.05..2.0f64],
            ),
            |((bounds, v, gamma0), obs, f_max)| {
                let mut state = LearnerState::new(bounds, v, gamma0, None).unwrap();
                for (i, o) in obs.iter().enumerate() {
                    state = begin_epoch_update(&state, o, f_max);
                    prop_assert_eq!(state.k, i as u64 + 1);
                    prop_assert!(state.gamma >= bounds.gamma_lb);
                    prop_assert!(state.gamma <= bounds.gamma_ub);
                    prop_assert!(state.u >= 0.0);
                    prop_assert_eq!(state.nu, state.u / v);
                    prop_assert!(state.m + 1e-9 * (1.0 + state.m) >= state.mu * state.mu);
                    if !f_max.is_finite() {
                        prop_assert_eq!(state.u, 0.0);
                    }
                }
                Ok(())
            },
        )
        .unwrap();
}

/// Unit momentum weight reproduces the plain iterate bit for bit.
pub fn suite_momentum_unit_identity(cases: u32) {
    runner(cases)
        .run(
            &(
                bounds_and_state(),
                observations(),
                prop_oneof![Just(f64::INFINITY), 0.05..2.0f64],
            ),
            |((bounds, v, gamma0), obs, f_max)| {
                let mut plain = LearnerState::new(bounds, v, gamma0, None).unwrap();
                let mut unit = LearnerState::new(bounds, v, gamma0, Some(1.0)).unwrap();
                for o in &obs {
                    plain = begin_epoch_update(&plain, o, f_max);
                    unit = begin_epoch_update(&unit, o, f_max);
                    prop_assert_eq!(plain.gamma.to_bits(), unit.gamma.to_bits());
                    prop_assert_eq!(plain.nu.to_bits(), unit.nu.to_bits());
                }
                Ok(())
            },
        )
        .unwrap();
}

/// The running moments equal the exact prefix means of the consumed failure
/// tails.
pub fn suite_running_moments_exact(cases: u32) {
    runner(cases)
        .run(
            &(bounds_and_state(), observations()),
            |((bounds, v, gamma0), obs)| {
                let mut state = LearnerState::new(bounds, v, gamma0, None).unwrap();
                let mut seen = Vec::new();
                for o in &obs {
                    state = begin_epoch_update(&state, o, f64::INFINITY);
                    seen.push(o.d_v_prev);
                    let n = seen.len() as f64;
                    let mean: f64 = seen.iter().sum::<f64>() / n;
                    let mean_sq: f64 = seen.iter().map(|x| x * x).sum::<f64>() / n;
                    let tol = 1e-12 * (1.0 + mean.abs());
                    let tol_sq = 1e-12 * (1.0 + mean_sq.abs());
                    prop_assert!(
                        (state.mu - mean).abs() <= tol,
                        "mu {} vs exact {mean}",
                        state.mu
                    );
                    prop_assert!(
                        (state.m - mean_sq).abs() <= tol_sq,
                        "m {} vs exact {mean_sq}",
                        state.m
                    );
                }
                Ok(())
            },
        )
        .unwrap();
}
