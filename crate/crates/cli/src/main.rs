//! `hems`: batch front end for baselines, prescient plans, MPC rollouts,
//! forecast fitting and capacity sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hems_core::accounting::{baseline_no_storage, evaluate};
use hems_core::forecast::{hour_index, ForecastModel};
use hems_core::io::{load_csv, write_json, write_synthetic, RunConfig, SeriesKind, Trace};
use hems_core::mpc::{run_mpc, Forecaster, OracleForecaster, PersistenceForecaster};
use hems_core::prescient::{enumerate_exact, solve_prescient, sweep_capacity, PrescientOptions, RateScaling};
use hems_core::synth::SynthSpec;
use hems_core::Error;

#[derive(Parser)]
#[command(name = "hems", version, about = "Home battery scheduling under tiered peak charges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cost of serving the load without storage.
    Baseline {
        #[arg(long)]
        config: PathBuf,
    },
    /// Optimal plan with perfect foresight.
    Prescient {
        #[arg(long)]
        config: PathBuf,
        /// Also enumerate every tier assignment and check agreement.
        #[arg(long)]
        enumerate_oracle: bool,
        /// Stop branch-and-bound after this many seconds.
        #[arg(long)]
        time_budget: Option<f64>,
    },
    /// Closed-loop receding-horizon simulation.
    Mpc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "fitted")]
        forecast: ForecastKind,
        #[arg(long)]
        surrogate_n: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Write per-step diagnostics to steps.json.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Fit a baseline-residual forecaster on an hourly series.
    FitForecast {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "load")]
        target: Target,
        #[arg(long, default_value_t = 0.5)]
        quantile: f64,
        #[arg(long, default_value_t = 1.0)]
        ridge: f64,
        #[arg(long, default_value_t = 1.0)]
        ar_ridge: f64,
    },
    /// Prescient savings over a range of storage capacities.
    SweepCapacity {
        #[arg(long)]
        config: PathBuf,
        /// `start:stop:step` in kWh, inclusive.
        #[arg(long, default_value = "0:60:5")]
        grid: String,
        /// Scale C and D with capacity by this factor instead of keeping them.
        #[arg(long)]
        rate_factor: Option<f64>,
    },
    /// Write a small synthetic scenario (CSV files and config.json).
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        months: usize,
        #[arg(long, default_value_t = 5)]
        days: usize,
        #[arg(long, default_value_t = 4)]
        day_length: usize,
        #[arg(long, default_value_t = 3)]
        levels: usize,
        #[arg(long, default_value_t = 2)]
        n_days: usize,
        #[arg(long, default_value = "synth")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ForecastKind {
    Fitted,
    Simple,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Load,
    Price,
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("io: cannot create output directory {}", cfg.output_dir.display()))?;
    Ok(&cfg.output_dir)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid("cli", format!("capacity grid `{spec}` is not start:stop:step")))?;
    let [lo, hi, step] = parts[..] else {
        return Err(Error::invalid("cli", format!("capacity grid `{spec}` is not start:stop:step")).into());
    };
    if step.is_nan() || step <= 0.0 || hi < lo || lo < 0.0 {
        return Err(Error::invalid("cli", format!("capacity grid `{spec}` is empty or negative")).into());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Baseline { config } => {
            let cfg = RunConfig::from_path(&config)?;
            let run = cfg.load()?;
            let report = baseline_no_storage(&run.scenario)?;
            let dir = out_dir(&cfg)?;
            write_json(&dir.join("report.json"), &report)?;
            println!("baseline total {:.0} NOK", report.total());
        }
        Command::Prescient {
            config,
            enumerate_oracle,
            time_budget,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let run = cfg.load()?;
            let s = &run.scenario;
            let opts = PrescientOptions {
                execution: cfg.execution,
                time_budget: time_budget.map(std::time::Duration::from_secs_f64),
                ..PrescientOptions::default()
            };
            let plan = solve_prescient(s, &opts)?;
            let report = evaluate(&plan.p, s)?.with_reference(&baseline_no_storage(s)?);
            let dir = out_dir(&cfg)?;
            let mut stats = json!({
                "tiers": plan.tiers,
                "energy_cost": plan.energy_cost,
                "peak_cost": plan.peak_cost,
                "total": plan.total,
                "stats": plan.stats,
            });
            if enumerate_oracle {
                let ex = enumerate_exact(s, &opts)?;
                let diff = (ex.total - plan.total).abs();
                stats["oracle"] = json!({ "total": ex.total, "tiers": ex.tiers, "abs_diff": diff });
                if diff > 1e-6 {
                    write_json(&dir.join("solve-stats.json"), &stats)?;
                    bail!("prescient: branch-and-bound total {} differs from enumeration {} by {diff}", plan.total, ex.total);
                }
            }
            Trace::new(s, &plan.p, &plan.c, &plan.d, &plan.q, None).write_csv(&dir.join("trace.csv"))?;
            write_json(&dir.join("report.json"), &report)?;
            write_json(&dir.join("solve-stats.json"), &stats)?;
            println!(
                "prescient total {:.0} NOK, tiers {:?}, {} LPs in {:.1} s",
                report.total(),
                plan.tiers,
                plan.stats.lps,
                plan.stats.wall_time_s
            );
        }
        Command::Mpc {
            config,
            forecast,
            surrogate_n,
            horizon,
            diagnostics,
        } => {
            let cfg = RunConfig::from_path(&config)?;
            let run = cfg.load()?;
            let s = &run.scenario;
            let mut opts = cfg.mpc;
            opts.execution = cfg.execution;
            opts.diagnostics |= diagnostics;
            if let Some(n) = surrogate_n {
                opts.surrogate_n = n;
            }
            if let Some(h) = horizon {
                opts.horizon = h;
            }
            let fc: Box<dyn Forecaster> = match forecast {
                ForecastKind::Fitted => Box::new(cfg.fitted_forecaster(&run)?),
                ForecastKind::Simple => Box::new(PersistenceForecaster),
                ForecastKind::Oracle => Box::new(OracleForecaster::new(s)),
            };
            let trace = run_mpc(s, fc.as_ref(), &opts)?;
            let report = trace.report.clone().with_reference(&baseline_no_storage(s)?);
            let dir = out_dir(&cfg)?;
            let pairs = trace.tier_pairs().collect();
            Trace::new(s, &trace.p, &trace.c, &trace.d, &trace.q, Some(pairs)).write_csv(&dir.join("trace.csv"))?;
            write_json(&dir.join("report.json"), &report)?;
            if opts.diagnostics {
                write_json(&dir.join("steps.json"), &trace.steps)?;
            }
            println!(
                "mpc total {:.0} NOK, {} LPs in {:.1} s",
                report.total(),
                trace.lps,
                trace.wall_time_s
            );
        }
        Command::FitForecast {
            train,
            out,
            target,
            quantile,
            ridge,
            ar_ridge,
        } => {
            let (kind, name) = match target {
                Target::Load => (SeriesKind::Load, "load"),
                Target::Price => (SeriesKind::Price, "price"),
            };
            let series = load_csv(&train, kind)?;
            let fc = hems_core::io::ForecastConfig {
                quantile,
                baseline_ridge: ridge,
                ar_ridge,
                ..Default::default()
            };
            let model = ForecastModel::fit(
                name,
                hour_index(series.start),
                &series.values,
                &fc.baseline_spec(),
                &fc.ar_spec(),
                Default::default(),
            )?;
            model.save(&out)?;
            println!("fitted {name} model on {} hours, written to {}", series.len(), out.display());
        }
        Command::SweepCapacity {
            config,
            grid,
            rate_factor,
        } => {
            let capacities = parse_grid(&grid)?;
            let cfg = RunConfig::from_path(&config)?;
            let run = cfg.load()?;
            let opts = PrescientOptions {
                execution: cfg.execution,
                ..PrescientOptions::default()
            };
            let rates = rate_factor.map_or(RateScaling::Hold, RateScaling::Proportional);
            let points = sweep_capacity(&run.scenario, &capacities, rates, &opts)?;
            let dir = out_dir(&cfg)?;
            let path = dir.join("sweep.csv");
            let mut body = String::from("capacity_kwh,total_nok,savings_percent\n");
            for p in &points {
                body.push_str(&format!("{},{},{}\n", p.capacity, p.total, p.savings_percent));
            }
            std::fs::write(&path, body).with_context(|| format!("io: cannot write {}", path.display()))?;
            for p in &points {
                println!("Q={:>5} kWh  total {:>8.0} NOK  savings {:>5.2}%", p.capacity, p.total, p.savings_percent);
            }
        }
        Command::Synth {
            seed,
            months,
            days,
            day_length,
            levels,
            n_days,
            out,
        } => {
            let spec = SynthSpec {
                seed,
                months,
                days,
                day_length,
                levels,
                n_days,
            };
            let path = write_synthetic(&out, &spec)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 2,
        Some(e) if e.is_infeasible() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
