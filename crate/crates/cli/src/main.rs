//! Command line front end: simulate, solve, fan out ensembles, fit decay
//! curves, and compare learner variants. Everything is driven by JSON run
//! files; outputs are versioned CSV tables, JSON records, and optional SVG
//! charts. The exit code is zero only when every requested output was
//! written.

mod svg;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use aoi_core::analysis::{
    compare_variance, fit_error_decay, run_ensemble, summarize_ensemble, DecayQuantity,
    EnsembleTable,
};
use aoi_core::config::{load_run_file, RunFile};
use aoi_core::oracle::{grid_bruteforce, OracleSolution};
use aoi_core::simulator::{run, RunResult};
use aoi_core::table::{
    meta_value, read_csv_file, write_csv_file, EnsembleRow, FitReport, RunPoint, VarianceRow,
};

#[derive(Parser)]
#[command(
    name = "aoi",
    about = "Simulate and learn sampling policies that minimize age of information \
             over a lossy two-way channel"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation described by a JSON run file.
    Simulate {
        config: PathBuf,
        /// Write the per-epoch trace table here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the run summary as JSON here (also printed).
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Write SVG charts into this directory.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Solve the offline problem for the file's channel and budget.
    Oracle {
        config: PathBuf,
        /// Write the solution as JSON here (also printed).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also run the file's brute-force grid and report both solutions.
        #[arg(long)]
        grid: bool,
    },
    /// Fan the run file out over seeds and policy variants.
    Ensemble {
        config: PathBuf,
        /// Write per-run checkpoint rows here.
        #[arg(long)]
        runs: Option<PathBuf>,
        /// Write per-checkpoint aggregate rows here.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Write SVG charts into this directory.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Fit an error-decay line to an ensemble table.
    Fit {
        table: PathBuf,
        #[arg(long, value_enum)]
        quantity: QuantityArg,
        /// Policy variant to fit.
        #[arg(long, default_value = "online")]
        variant: String,
        /// Write the fit report as a one-row table here (also printed).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the iterate spread of two learner variants, paired by seed.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "online")]
        variant_a: String,
        #[arg(long, default_value = "online_momentum")]
        variant_b: String,
        /// Write per-checkpoint comparison rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuantityArg {
    /// Mean squared iterate error, fitted in log-log axes.
    GammaMse,
    /// Mean regret, fitted against ln k.
    Regret,
}

impl From<QuantityArg> for DecayQuantity {
    fn from(q: QuantityArg) -> Self {
        match q {
            QuantityArg::GammaMse => DecayQuantity::GammaMse,
            QuantityArg::Regret => DecayQuantity::Regret,
        }
    }
}

fn main() -> Result<()> {
    init_worker_pool()?;
    match Cli::parse().cmd {
        Cmd::Simulate {
            config,
            trace,
            summary,
            plot,
        } => cmd_simulate(&config, trace.as_deref(), summary.as_deref(), plot.as_deref()),
        Cmd::Oracle { config, out, grid } => cmd_oracle(&config, out.as_deref(), grid),
        Cmd::Ensemble {
            config,
            runs,
            summary,
            plot,
        } => cmd_ensemble(&config, runs.as_deref(), summary.as_deref(), plot.as_deref()),
        Cmd::Fit {
            table,
            quantity,
            variant,
            out,
        } => cmd_fit(&table, quantity, &variant, out.as_deref()),
        Cmd::Compare {
            a,
            b,
            variant_a,
            variant_b,
            out,
        } => cmd_compare(&a, &b, &variant_a, &variant_b, out.as_deref()),
    }
}

/// Honors `AOI_WORKERS` for the global worker pool.
fn init_worker_pool() -> Result<()> {
    if let Ok(value) = std::env::var("AOI_WORKERS") {
        let n: usize = value
            .parse()
            .with_context(|| format!("AOI_WORKERS must be a thread count, got {value:?}"))?;
        if n == 0 {
            bail!("AOI_WORKERS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("worker pool was already initialized")?;
    }
    Ok(())
}

fn load(config: &Path) -> Result<RunFile> {
    load_run_file(config).with_context(|| format!("reading run file {}", config.display()))
}

/// Solves the offline problem when any reference in the file asks for it.
fn maybe_oracle(file: &RunFile) -> Result<Option<OracleSolution>> {
    if file.wants_oracle() {
        eprintln!("solving the offline reference problem...");
        Ok(Some(file.solve_oracle()?))
    } else {
        Ok(None)
    }
}

fn cmd_simulate(
    config: &Path,
    trace: Option<&Path>,
    summary: Option<&Path>,
    plot: Option<&Path>,
) -> Result<()> {
    let file = load(config)?;
    let oracle = maybe_oracle(&file)?;
    let run_config = file.to_run_config(oracle.as_ref())?;
    let result = run(&run_config)?;

    let text = serde_json::to_string_pretty(&result.summary)?;
    println!("{text}");
    if let Some(path) = summary {
        std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = trace {
        let meta = [
            ("channel", run_config.channel.fingerprint()),
            ("policy", run_config.policy.name().to_string()),
            ("seed", run_config.seed.to_string()),
            ("include_warmup", run_config.include_warmup.to_string()),
        ];
        write_csv_file(path, "trace", &meta, &result.rows)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = plot {
        write_simulation_plots(dir, &result)?;
    }
    Ok(())
}

fn write_simulation_plots(dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let running: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter_map(|row| {
            result
                .cumulative_at(row)
                .map(|(area, t, _)| (row.k as f64, area / t))
        })
        .collect();
    let chart = svg::line_chart(
        "Running time-average age",
        "epoch",
        "age",
        &[svg::Series {
            label: "running average".to_string(),
            points: running,
        }],
        false,
        false,
    );
    std::fs::write(dir.join("running_aoi.svg"), chart)?;

    let gammas: Vec<(f64, f64)> = result
        .rows
        .iter()
        .filter_map(|row| row.gamma.map(|g| (row.k as f64, g)))
        .collect();
    if !gammas.is_empty() {
        let thetas: Vec<(f64, f64)> = result
            .rows
            .iter()
            .filter_map(|row| {
                row.gamma
                    .map(|g| (row.k as f64, g + row.nu.unwrap_or(0.0)))
            })
            .collect();
        let chart = svg::line_chart(
            "Learner iterate",
            "epoch",
            "value",
            &[
                svg::Series {
                    label: "gamma".to_string(),
                    points: gammas,
                },
                svg::Series {
                    label: "threshold".to_string(),
                    points: thetas,
                },
            ],
            false,
            false,
        );
        std::fs::write(dir.join("learner.svg"), chart)?;
    }
    Ok(())
}

fn cmd_oracle(config: &Path, out: Option<&Path>, grid: bool) -> Result<()> {
    let file = load(config)?;
    let solution = file.solve_oracle()?;
    let text = serde_json::to_string_pretty(&solution)?;
    println!("{text}");
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if grid {
        let Some(grid_file) = &file.oracle.grid else {
            bail!("--grid requested but the run file has no oracle.grid block");
        };
        let params = file.channel.resolve()?;
        let steps = (grid_file.theta_max / grid_file.step).floor() as usize;
        let thetas: Vec<f64> = (0..=steps).map(|i| i as f64 * grid_file.step).collect();
        let brute = grid_bruteforce(
            &params,
            file.f_max(),
            &thetas,
            grid_file.samples,
            file.seed,
        )?;
        println!("{}", serde_json::to_string_pretty(&brute)?);
        println!(
            "grid check: |theta* - grid theta*| = {:.6}, |age - grid age| = {:.6} (grid ci {:.6})",
            (solution.theta_star - brute.theta_star).abs(),
            (solution.aoi_opt - brute.aoi_opt).abs(),
            brute.ci_halfwidth
        );
    }
    Ok(())
}

fn cmd_ensemble(
    config: &Path,
    runs: Option<&Path>,
    summary: Option<&Path>,
    plot: Option<&Path>,
) -> Result<()> {
    let file = load(config)?;
    let oracle = maybe_oracle(&file)?;
    let Some(spec) = file.to_ensemble_spec(oracle.as_ref())? else {
        bail!("the run file has no ensemble block");
    };
    let table = run_ensemble(&spec)?;
    let aggregates = summarize_ensemble(&table);

    for row in aggregates
        .iter()
        .filter(|r| r.k == *table.checkpoints.last().unwrap())
    {
        let gamma = row
            .gamma_mean
            .map_or(String::new(), |g| format!(", mean gamma {g:.4}"));
        println!(
            "{} at k={}: age {:.4} +- {:.4}, interval {:.4}{gamma}",
            row.variant,
            row.k,
            row.aoi_mean,
            row.aoi_std / (row.n_seeds as f64).sqrt(),
            row.interval_mean,
        );
    }

    let meta = [
        ("channel", table.fingerprint.clone()),
        ("seeds", table.n_seeds.to_string()),
        ("first_seed", spec.base.seed.to_string()),
    ];
    if let Some(path) = runs {
        write_csv_file(path, "ensemble", &meta, &table.rows)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = summary {
        write_csv_file(path, "ensemble_summary", &meta, &aggregates)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = plot {
        write_ensemble_plots(dir, &aggregates)?;
    }
    Ok(())
}

fn write_ensemble_plots(dir: &Path, aggregates: &[EnsembleRow]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut variants: Vec<&str> = Vec::new();
    for row in aggregates {
        if !variants.contains(&row.variant.as_str()) {
            variants.push(&row.variant);
        }
    }
    let series_of = |get: &dyn Fn(&EnsembleRow) -> Option<f64>| -> Vec<svg::Series> {
        variants
            .iter()
            .map(|v| svg::Series {
                label: v.to_string(),
                points: aggregates
                    .iter()
                    .filter(|r| &r.variant == v)
                    .filter_map(|r| get(r).map(|y| (r.k as f64, y)))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect()
    };

    let aoi = series_of(&|r| Some(r.aoi_mean));
    std::fs::write(
        dir.join("aoi.svg"),
        svg::line_chart("Mean time-average age", "epoch", "age", &aoi, true, false),
    )?;

    let mse = series_of(&|r| r.sq_err_mean);
    if !mse.is_empty() {
        std::fs::write(
            dir.join("gamma_mse.svg"),
            svg::line_chart(
                "Mean squared iterate error",
                "epoch",
                "mse",
                &mse,
                true,
                true,
            ),
        )?;
    }
    let regret = series_of(&|r| r.regret_mean);
    if !regret.is_empty() {
        std::fs::write(
            dir.join("regret.svg"),
            svg::line_chart("Mean regret", "epoch", "regret", &regret, true, false),
        )?;
    }
    Ok(())
}

/// Rebuilds an in-memory ensemble from a persisted table.
fn table_from_file(path: &Path) -> Result<EnsembleTable> {
    let (meta, rows): (_, Vec<RunPoint>) = read_csv_file(path, "ensemble")
        .with_context(|| format!("reading {}", path.display()))?;
    let fingerprint = meta_value(&meta, "channel")
        .with_context(|| format!("{} has no channel metadata", path.display()))?
        .to_string();
    let n_seeds: u64 = meta_value(&meta, "seeds")
        .with_context(|| format!("{} has no seeds metadata", path.display()))?
        .parse()
        .context("seeds metadata is not a count")?;
    let mut checkpoints: Vec<u64> = rows.iter().map(|r| r.k).collect();
    checkpoints.sort_unstable();
    checkpoints.dedup();
    Ok(EnsembleTable {
        fingerprint,
        n_seeds,
        checkpoints,
        rows,
    })
}

fn cmd_fit(table: &Path, quantity: QuantityArg, variant: &str, out: Option<&Path>) -> Result<()> {
    let ensemble = table_from_file(table)?;
    let decay: DecayQuantity = quantity.into();
    let (fit, points) = fit_error_decay(&ensemble.rows, variant, decay)?;
    let report = FitReport {
        quantity: decay.label().to_string(),
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        n_points: points.len() as u64,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(path) = out {
        write_csv_file(path, "fit", &[("variant", variant.to_string())], &[report])
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_compare(
    a: &Path,
    b: &Path,
    variant_a: &str,
    variant_b: &str,
    out: Option<&Path>,
) -> Result<()> {
    let table_a = table_from_file(a)?;
    let table_b = table_from_file(b)?;
    let rows: Vec<VarianceRow> = compare_variance(&table_a, variant_a, &table_b, variant_b)?;
    for row in &rows {
        let ratio = row
            .ratio
            .map_or("NA".to_string(), |r| format!("{r:.4}"));
        println!(
            "k={}: std {:.5} vs {:.5} (ratio {ratio}), age diff {:+.4} +- {:.4}",
            row.k, row.std_plain, row.std_momentum, row.aoi_diff_mean, row.aoi_diff_se
        );
    }
    if let Some(path) = out {
        let meta = [
            ("variant_a", variant_a.to_string()),
            ("variant_b", variant_b.to_string()),
        ];
        write_csv_file(path, "variance", &meta, &rows)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
