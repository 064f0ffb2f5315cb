//! `wbc`: run scenarios, sweep follower constraints, verify stored results.
//!
//! Exit codes: 0 success, 1 follower or dynamics failure, 2 usage or
//! scenario error, 3 numerical divergence, 4 solver failure budget
//! exceeded, 5 I/O or output format error, 6 verification mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wbc_core::experiment::{
    mean_by_value, run_to_dir, sweep_to_dir, verify_dir, ExperimentError, OverrideSpec, RunMetrics, ScenarioSource,
    SweepConfig, SweepParam, SweepValue,
};
use wbc_core::sim::SimError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_SOLVER_BUDGET: u8 = 4;
pub const EXIT_IO: u8 = 5;
pub const EXIT_VERIFY: u8 = 6;

#[derive(Parser)]
#[command(name = "wbc", version, about = "Whole-body follower simulation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trajectory and safety report.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run a scenario once per parameter value plus a baseline.
    Sweep {
        scenario: String,
        /// mu, hip_rom or mode.
        #[arg(short, long)]
        param: SweepParam,
        /// Comma-separated values; `none` disables the constraint, hip ROM
        /// is in degrees.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds; each value runs once per seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Recompute reports and summaries from stored trajectories.
    Verify { dir: PathBuf },
}

#[derive(Args, Clone, Default)]
struct OverrideArgs {
    /// training or deployment.
    #[arg(long)]
    mode: Option<String>,
    /// Friction coefficient for the force constraints, or `none`.
    #[arg(long)]
    mu: Option<String>,
    /// Hip range of motion in degrees, or `none`.
    #[arg(long = "hip-rom")]
    hip_rom: Option<String>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Follower rate (Hz).
    #[arg(long)]
    rate: Option<f64>,
    /// Physics step (s).
    #[arg(long = "physics-dt")]
    physics_dt: Option<f64>,
}

impl From<OverrideArgs> for OverrideSpec {
    fn from(a: OverrideArgs) -> Self {
        OverrideSpec {
            mode: a.mode,
            mu: a.mu,
            hip_rom: a.hip_rom,
            duration: a.duration,
            seed: a.seed,
            rate: a.rate,
            physics_dt: a.physics_dt,
        }
    }
}

fn exit_code(e: &ExperimentError) -> u8 {
    match e {
        ExperimentError::Scenario(_) | ExperimentError::Value { .. } => EXIT_USAGE,
        ExperimentError::Sim(SimError::Scenario(_)) => EXIT_USAGE,
        ExperimentError::Sim(SimError::NumericalDivergence { .. }) => EXIT_DIVERGENCE,
        ExperimentError::Sim(SimError::SolverFailureBudgetExceeded { .. }) => EXIT_SOLVER_BUDGET,
        ExperimentError::Sim(_) => EXIT_FAILURE,
        ExperimentError::Io { .. } | ExperimentError::Trajectory { .. } | ExperimentError::Format { .. } => EXIT_IO,
    }
}

fn print_summary(rows: &[RunMetrics]) {
    println!(
        "{:<28} {:>8} {:>10} {:>10} {:>8} {:>6} {:>6} {:>10} {:>10} {:>9}",
        "run", "value", "mean_slip", "step_len", "dist", "slipE", "tauE", "hip_dev", "hip_exc", "track"
    );
    for r in rows {
        println!(
            "{:<28} {:>8} {:>10.5} {:>10.5} {:>8.3} {:>6} {:>6} {:>10.5} {:>10.2e} {:>9.5}",
            r.run,
            r.value,
            r.mean_slip,
            r.effective_step_length,
            r.distance,
            r.slip_events,
            r.torque_events,
            r.hip_max_deviation,
            r.hip_range_excess,
            r.mean_tracking_error
        );
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let fail = |e: ExperimentError| (exit_code(&e), e.to_string());
    match cli.command {
        Cmd::Run { scenario, out, overrides } => {
            let source = ScenarioSource::resolve(&scenario).map_err(fail)?;
            let res = run_to_dir(&source, &overrides.into(), &out).map_err(fail)?;
            let r = &res.report;
            println!("slip events:      {} (max {:.4} m, mean {:.4} m)", r.slip_events, r.max_slip, r.mean_slip);
            println!("torque events:    {} (max |tau| {:.3} N m)", r.torque_events, r.max_torque);
            println!("collision events: {} (max excess {:.2e} rad)", r.collision_events, r.max_limit_excess);
            println!("fallback ticks:   {}", r.fallback_ticks);
            println!("distance:         {:.3} m", res.metrics.distance);
            println!("stances:");
            println!("  {:>4} {:>9} {:>9} {:>9}", "foot", "start", "end", "slip");
            for s in &r.stances {
                println!("  {:>4} {:>9.3} {:>9.3} {:>9.5}{}", s.foot, s.start_time, s.end_time, s.slip, if s.open { " open" } else { "" });
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Cmd::Sweep { scenario, param, values, seeds, jobs, out, overrides } => {
            let source = ScenarioSource::resolve(&scenario).map_err(fail)?;
            let values = values.iter().map(|v| SweepValue::parse(param, v)).collect::<Result<Vec<_>, _>>().map_err(fail)?;
            let config = SweepConfig { param, values, seeds, overrides: overrides.into(), jobs };
            let outcome = sweep_to_dir(&source, &config, &out).map_err(fail)?;
            print_summary(&outcome.rows);
            if config.seeds.len() > 1 {
                println!("\nmeans over seeds:");
                print_summary(&mean_by_value(&outcome.rows));
            }
            println!("wrote {}", out.display());
            match outcome.failures.into_iter().next() {
                Some((name, e)) => Err((exit_code(&e), format!("sweep run {name} failed: {e}"))),
                None => Ok(()),
            }
        }
        Cmd::Verify { dir } => {
            let report = verify_dir(&dir).map_err(fail)?;
            for m in &report.mismatches {
                eprintln!("mismatch: {m}");
            }
            if report.ok() {
                println!("verified {} runs", report.checked);
                Ok(())
            } else {
                Err((EXIT_VERIFY, format!("{} mismatches in {} runs", report.mismatches.len(), report.checked)))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
