//! Multi-seed ensembles and the statistics drawn from them.
//!
//! An ensemble runs one or more policy variants over a shared block of seeds,
//! so comparisons between variants are paired: seed `i` of every variant sees
//! the same delay and loss draws. Results are flattened into checkpoint rows
//! that serialize to the versioned CSV tables, with the channel digest kept
//! alongside so tables from different channels refuse to aggregate.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::PolicySpec;
use crate::simulator::{run, RunConfig};
use crate::stats::{fit_line, mean, paired_diff, sample_std, LineFit};
use crate::table::{EnsembleRow, RunPoint, VarianceRow};

/// What to run: the base configuration fanned out over seeds and variants.
#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    /// Template configuration; its `seed` is the first of the block and its
    /// `policy` is ignored in favor of `policies`.
    pub base: RunConfig,
    /// Policy variants to run under identical seeds.
    pub policies: Vec<PolicySpec>,
    pub n_seeds: u64,
    /// Epoch indices at which rows are recorded, strictly increasing.
    pub checkpoints: Vec<u64>,
    /// Reference root for the squared-error column.
    pub gamma_ref: Option<f64>,
    /// Reference age for the regret column; falls back to the base config's.
    pub aoi_ref: Option<f64>,
}

/// Flattened ensemble output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTable {
    /// Channel digest of every run in the table.
    pub fingerprint: String,
    pub n_seeds: u64,
    pub checkpoints: Vec<u64>,
    pub rows: Vec<RunPoint>,
}

impl EnsembleSpec {
    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::invalid("ensemble needs at least one policy"));
        }
        if self.n_seeds < 1 {
            return Err(Error::invalid("ensemble needs at least one seed"));
        }
        if self.checkpoints.is_empty() {
            return Err(Error::invalid("ensemble needs at least one checkpoint"));
        }
        if !self.checkpoints.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::invalid(
                "checkpoints must be strictly increasing".to_string(),
            ));
        }
        let last = *self.checkpoints.last().unwrap();
        if self.checkpoints[0] < 1 || last > self.base.horizon_epochs {
            return Err(Error::invalid(format!(
                "checkpoints must lie in [1, {}], got [{}, {last}]",
                self.base.horizon_epochs, self.checkpoints[0]
            )));
        }
        Ok(())
    }
}

/// Runs every `(policy, seed)` pair and collects checkpoint rows in
/// deterministic order: by policy, then seed, then epoch.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleTable> {
    spec.validate()?;
    let jobs: Vec<(PolicySpec, u64)> = spec
        .policies
        .iter()
        .flat_map(|p| (0..spec.n_seeds).map(move |i| (*p, spec.base.seed + i)))
        .collect();

    let per_run: Vec<Result<Vec<RunPoint>>> = jobs
        .par_iter()
        .map(|(policy, seed)| {
            let mut config = spec.base.clone();
            config.policy = *policy;
            config.seed = *seed;
            config.aoi_ref = spec.aoi_ref.or(spec.base.aoi_ref);
            config.trace_stride = config.horizon_epochs;
            config.extra_trace_epochs = spec.checkpoints.clone();
            let result = run(&config)?;
            let points = result
                .rows
                .iter()
                .filter(|row| spec.checkpoints.binary_search(&row.k).is_ok())
                .map(|row| {
                    let time_avg = result
                        .cumulative_at(row)
                        .map_or(f64::NAN, |(area, t, _)| area / t);
                    RunPoint {
                        variant: policy.name().to_string(),
                        seed: *seed,
                        k: row.k,
                        gamma: row.gamma,
                        nu: row.nu,
                        time_avg_aoi: time_avg,
                        regret: row.regret,
                        interval_mean: row.interval_mean,
                        sq_err: spec
                            .gamma_ref
                            .and_then(|g| row.gamma.map(|x| (x - g) * (x - g))),
                    }
                })
                .collect();
            Ok(points)
        })
        .collect();

    let mut rows = Vec::new();
    for chunk in per_run {
        rows.extend(chunk?);
    }
    Ok(EnsembleTable {
        fingerprint: spec.base.channel.fingerprint(),
        n_seeds: spec.n_seeds,
        checkpoints: spec.checkpoints.clone(),
        rows,
    })
}

/// Collapses an ensemble to per-checkpoint means and spreads, one row per
/// `(variant, checkpoint)` in the table's variant order. The aggregation only
/// depends on the multiset of runs, never on seed order.
pub fn summarize_ensemble(table: &EnsembleTable) -> Vec<EnsembleRow> {
    let mut variants: Vec<&str> = Vec::new();
    for row in &table.rows {
        if !variants.contains(&row.variant.as_str()) {
            variants.push(&row.variant);
        }
    }
    let mut out = Vec::new();
    for variant in variants {
        for &k in &table.checkpoints {
            let rows: Vec<&RunPoint> = table
                .rows
                .iter()
                .filter(|r| r.variant == variant && r.k == k)
                .collect();
            if rows.is_empty() {
                continue;
            }
            let aoi: Vec<f64> = rows.iter().map(|r| r.time_avg_aoi).collect();
            let interval: Vec<f64> = rows.iter().map(|r| r.interval_mean).collect();
            let all = |get: fn(&RunPoint) -> Option<f64>| -> Option<Vec<f64>> {
                rows.iter().map(|r| get(r)).collect()
            };
            let gammas = all(|r| r.gamma);
            let sq_errs = all(|r| r.sq_err);
            let regrets = all(|r| r.regret);
            out.push(EnsembleRow {
                variant: variant.to_string(),
                k,
                n_seeds: rows.len() as u64,
                aoi_mean: mean(&aoi),
                aoi_std: sample_std(&aoi),
                gamma_mean: gammas.as_deref().map(mean),
                gamma_std: gammas.as_deref().map(sample_std),
                sq_err_mean: sq_errs.as_deref().map(mean),
                sq_err_std: sq_errs.as_deref().map(sample_std),
                regret_mean: regrets.as_deref().map(mean),
                regret_std: regrets.as_deref().map(sample_std),
                interval_mean: mean(&interval),
                interval_std: sample_std(&interval),
            });
        }
    }
    out
}

/// Which decay curve to fit across checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayQuantity {
    /// Mean squared iterate error against `ln k`, both axes logged; a slope
    /// near minus one is the `1/k` rate.
    GammaMse,
    /// Mean regret against `ln k`; a straight line is logarithmic growth.
    Regret,
}

impl DecayQuantity {
    pub fn label(self) -> &'static str {
        match self {
            DecayQuantity::GammaMse => "gamma_mse",
            DecayQuantity::Regret => "regret",
        }
    }
}

/// Averages the chosen quantity per checkpoint for one variant and fits a
/// line in the transformed axes. Returns the fit plus the per-checkpoint
/// `(k, mean)` points it was computed from.
pub fn fit_error_decay(
    rows: &[RunPoint],
    variant: &str,
    quantity: DecayQuantity,
) -> Result<(LineFit, Vec<(u64, f64)>)> {
    let mut ks: Vec<u64> = rows
        .iter()
        .filter(|r| r.variant == variant)
        .map(|r| r.k)
        .collect();
    ks.sort_unstable();
    ks.dedup();
    if ks.len() < 3 {
        return Err(Error::DegenerateFit(format!(
            "need at least three checkpoints for variant {variant:?}, got {}",
            ks.len()
        )));
    }
    let mut points = Vec::with_capacity(ks.len());
    for &k in &ks {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant && r.k == k)
            .map(|r| match quantity {
                DecayQuantity::GammaMse => r.sq_err.ok_or_else(|| {
                    Error::DegenerateFit(
                        "a row has no squared error; was a reference root set?".to_string(),
                    )
                }),
                DecayQuantity::Regret => r.regret.ok_or_else(|| {
                    Error::DegenerateFit(
                        "a row has no regret; was a reference age set?".to_string(),
                    )
                }),
            })
            .collect::<Result<_>>()?;
        points.push((k, mean(&values)));
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(k, y)| {
            let x = (k as f64).ln();
            match quantity {
                DecayQuantity::GammaMse => {
                    if y > 0.0 {
                        Ok((x, y.ln()))
                    } else {
                        Err(Error::DegenerateFit(format!(
                            "mean squared error at k={k} is not positive ({y})"
                        )))
                    }
                }
                DecayQuantity::Regret => Ok((x, y)),
            }
        })
        .collect::<Result<_>>()?;
    Ok((fit_line(&xy)?, points))
}

/// Pairs two variants of one ensemble by `(seed, k)` and compares the spread
/// of their iterates plus their time-average ages, checkpoint by checkpoint.
pub fn compare_variance(
    a: &EnsembleTable,
    variant_a: &str,
    b: &EnsembleTable,
    variant_b: &str,
) -> Result<Vec<VarianceRow>> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::MixedChannels(format!(
            "tables come from different channels ({} vs {})",
            a.fingerprint, b.fingerprint
        )));
    }
    if a.checkpoints != b.checkpoints {
        return Err(Error::UnpairedSeeds(
            "tables record different checkpoints".to_string(),
        ));
    }
    let mut out = Vec::with_capacity(a.checkpoints.len());
    for &k in &a.checkpoints {
        let mut side_a = slice_checkpoint(&a.rows, variant_a, k)?;
        let mut side_b = slice_checkpoint(&b.rows, variant_b, k)?;
        side_a.sort_by_key(|(seed, ..)| *seed);
        side_b.sort_by_key(|(seed, ..)| *seed);
        if side_a.len() != side_b.len()
            || side_a
                .iter()
                .zip(&side_b)
                .any(|((sa, ..), (sb, ..))| sa != sb)
        {
            return Err(Error::UnpairedSeeds(format!(
                "seed sets differ at checkpoint {k}"
            )));
        }
        if side_a.len() < 2 {
            return Err(Error::UnpairedSeeds(format!(
                "need at least two seeds per checkpoint, got {} at k={k}",
                side_a.len()
            )));
        }
        let gammas_a: Vec<f64> = side_a.iter().map(|&(_, g, _)| g).collect();
        let gammas_b: Vec<f64> = side_b.iter().map(|&(_, g, _)| g).collect();
        let aoi_a: Vec<f64> = side_a.iter().map(|&(_, _, v)| v).collect();
        let aoi_b: Vec<f64> = side_b.iter().map(|&(_, _, v)| v).collect();
        let std_plain = sample_std(&gammas_a);
        let std_momentum = sample_std(&gammas_b);
        let ratio = if std_plain > 1e-12 {
            Some(std_momentum / std_plain)
        } else {
            None
        };
        let (aoi_diff_mean, aoi_diff_se) = paired_diff(&aoi_b, &aoi_a)?;
        out.push(VarianceRow {
            k,
            n_seeds: side_a.len() as u64,
            std_plain,
            std_momentum,
            ratio,
            aoi_plain_mean: mean(&aoi_a),
            aoi_momentum_mean: mean(&aoi_b),
            aoi_diff_mean,
            aoi_diff_se,
        });
    }
    Ok(out)
}

fn slice_checkpoint(rows: &[RunPoint], variant: &str, k: u64) -> Result<Vec<(u64, f64, f64)>> {
    rows.iter()
        .filter(|r| r.variant == variant && r.k == k)
        .map(|r| {
            let gamma = r.gamma.ok_or_else(|| {
                Error::invalid(format!(
                    "variant {variant:?} has no recorded iterate at k={k}; \
                     spread comparison needs online rows"
                ))
            })?;
            Ok((r.seed, gamma, r.time_avg_aoi))
        })
        .collect()
}

/// Rows of one variant at one checkpoint, sorted by seed.
pub fn checkpoint_rows<'a>(rows: &'a [RunPoint], variant: &str, k: u64) -> Vec<&'a RunPoint> {
    let mut out: Vec<&RunPoint> = rows
        .iter()
        .filter(|r| r.variant == variant && r.k == k)
        .collect();
    out.sort_by_key(|r| r.seed);
    out
}

/// Paired difference of time-average age, `a` minus `b`, matched by seed.
pub fn paired_aoi_difference(a: &[&RunPoint], b: &[&RunPoint]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.seed != y.seed) {
        return Err(Error::UnpairedSeeds(
            "time-average comparison needs identical seed sets".to_string(),
        ));
    }
    let xs: Vec<f64> = a.iter().map(|r| r.time_avg_aoi).collect();
    let ys: Vec<f64> = b.iter().map(|r| r.time_avg_aoi).collect();
    paired_diff(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelParams, DelayDistribution};
    use crate::learner::MomentPriors;
    use approx::assert_abs_diff_eq;

    fn unit_uniform_channel(alpha: f64) -> ChannelParams {
        ChannelParams::new(
            alpha,
            DelayDistribution::uniform(0.0, 1.0).unwrap(),
            DelayDistribution::uniform(0.0, 1.0).unwrap(),
        )
        .unwrap()
    }

    fn online_spec() -> EnsembleSpec {
        let params = unit_uniform_channel(0.3);
        let mut base = RunConfig::new(params, PolicySpec::Online, 2000, 100);
        base.priors = Some(MomentPriors::exact(&params));
        EnsembleSpec {
            base,
            policies: vec![PolicySpec::Online, PolicySpec::OnlineMomentum],
            n_seeds: 6,
            checkpoints: vec![100, 500, 2000],
            gamma_ref: Some(0.5),
            aoi_ref: Some(2.0),
        }
    }

    #[test]
    fn ensembles_fan_out_in_deterministic_order() {
        let spec = online_spec();
        let table = run_ensemble(&spec).unwrap();
        assert_eq!(table.rows.len(), 2 * 6 * 3);
        let again = run_ensemble(&spec).unwrap();
        assert_eq!(table, again);
        // Policy-major, seed-minor, checkpoint-innermost ordering.
        assert_eq!(table.rows[0].variant, "online");
        assert_eq!(table.rows[0].seed, 100);
        assert_eq!(table.rows[0].k, 100);
        assert_eq!(table.rows[1].k, 500);
        assert_eq!(table.rows[3].seed, 101);
        assert_eq!(table.rows[18].variant, "online_momentum");
        for row in &table.rows {
            assert!(row.gamma.is_some());
            assert!(row.sq_err.is_some());
            assert!(row.regret.is_some());
        }
    }

    #[test]
    fn decay_fit_recovers_a_planted_rate() {
        // Synthetic rows with mse = 4/k give slope -1 and intercept ln 4.
        let mut rows = Vec::new();
        for &k in &[10u64, 100, 1000, 10_000] {
            for seed in 0..3 {
                rows.push(RunPoint {
                    variant: "online".to_string(),
                    seed,
                    k,
                    gamma: Some(0.0),
                    nu: None,
                    time_avg_aoi: 0.0,
                    regret: Some(3.0 * (k as f64).ln() + 7.0),
                    interval_mean: 1.0,
                    sq_err: Some(4.0 / k as f64),
                });
            }
        }
        let (fit, points) = fit_error_decay(&rows, "online", DecayQuantity::GammaMse).unwrap();
        assert_abs_diff_eq!(fit.slope, -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 4.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert_eq!(points.len(), 4);

        let (fit, _) = fit_error_decay(&rows, "online", DecayQuantity::Regret).unwrap();
        assert_abs_diff_eq!(fit.slope, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.intercept, 7.0, epsilon = 1e-9);

        assert!(fit_error_decay(&rows, "absent", DecayQuantity::Regret).is_err());
    }

    #[test]
    fn summaries_are_seed_order_invariant() {
        let table = run_ensemble(&online_spec()).unwrap();
        let summary = summarize_ensemble(&table);
        assert_eq!(summary.len(), 2 * 3);
        for row in &summary {
            assert_eq!(row.n_seeds, 6);
            assert!(row.aoi_mean.is_finite());
            assert!(row.gamma_std.unwrap() >= 0.0);
            assert!(row.sq_err_mean.unwrap() >= 0.0);
        }

        let mut shuffled = table.clone();
        // Reverse within each variant block: different seed order, same runs.
        shuffled.rows[0..18].reverse();
        shuffled.rows[18..36].reverse();
        let again = summarize_ensemble(&shuffled);
        for (a, b) in summary.iter().zip(&again) {
            assert_eq!(a.variant, b.variant);
            assert_eq!(a.k, b.k);
            assert_abs_diff_eq!(a.aoi_mean, b.aoi_mean, epsilon = 1e-12);
            assert_abs_diff_eq!(a.aoi_std, b.aoi_std, epsilon = 1e-12);
            assert_abs_diff_eq!(
                a.gamma_mean.unwrap(),
                b.gamma_mean.unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn single_seed_summary_equals_the_run_itself() {
        let mut spec = online_spec();
        spec.n_seeds = 1;
        spec.policies = vec![PolicySpec::Online];
        let table = run_ensemble(&spec).unwrap();
        let summary = summarize_ensemble(&table);
        assert_eq!(summary.len(), table.rows.len());
        for (agg, run) in summary.iter().zip(&table.rows) {
            assert_eq!(agg.k, run.k);
            assert_eq!(agg.aoi_mean, run.time_avg_aoi);
            assert_eq!(agg.aoi_std, 0.0);
            assert_eq!(agg.gamma_mean, run.gamma);
        }
    }

    #[test]
    fn variance_comparison_pairs_by_seed() {
        let table = run_ensemble(&online_spec()).unwrap();
        let rows = compare_variance(&table, "online", &table, "online_momentum").unwrap();
        assert_eq!(rows.len(), 3);
        for row in &rows {
            assert_eq!(row.n_seeds, 6);
            assert!(row.std_plain > 0.0);
            assert!(row.std_momentum > 0.0);
            assert!(row.ratio.unwrap() > 0.0);
            assert!(row.aoi_diff_se >= 0.0);
        }
    }

    #[test]
    fn mismatched_tables_are_refused() {
        let table = run_ensemble(&online_spec()).unwrap();
        let mut other = table.clone();
        other.fingerprint = "0000000000000000".to_string();
        let err = compare_variance(&table, "online", &other, "online_momentum").unwrap_err();
        assert!(matches!(err, Error::MixedChannels(_)), "{err}");

        let mut shifted = table.clone();
        shifted.checkpoints = vec![100, 500, 1999];
        let err = compare_variance(&table, "online", &shifted, "online_momentum").unwrap_err();
        assert!(matches!(err, Error::UnpairedSeeds(_)), "{err}");

        let mut dropped = table.clone();
        dropped.rows.retain(|r| r.seed != 102 || r.variant != "online_momentum");
        let err = compare_variance(&table, "online", &dropped, "online_momentum").unwrap_err();
        assert!(matches!(err, Error::UnpairedSeeds(_)), "{err}");
    }

    #[test]
    fn checkpoint_helpers_pair_time_averages() {
        let table = run_ensemble(&online_spec()).unwrap();
        let a = checkpoint_rows(&table.rows, "online", 2000);
        let b = checkpoint_rows(&table.rows, "online_momentum", 2000);
        assert_eq!(a.len(), 6);
        let (diff, se) = paired_aoi_difference(&a, &b).unwrap();
        assert!(diff.is_finite() && se >= 0.0);

        let truncated = &b[1..];
        assert!(paired_aoi_difference(&a, truncated).is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = online_spec();
        spec.checkpoints = vec![100, 100];
        assert!(run_ensemble(&spec).is_err());
        spec.checkpoints = vec![100, 5000];
        assert!(run_ensemble(&spec).is_err());
        spec.checkpoints = vec![100];
        spec.policies.clear();
        assert!(run_ensemble(&spec).is_err());
        spec.policies = vec![PolicySpec::Online];
        spec.n_seeds = 0;
        assert!(run_ensemble(&spec).is_err());
    }
}
