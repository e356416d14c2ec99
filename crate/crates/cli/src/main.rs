use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vtcoord_cli::{cmd_bounds, cmd_run, cmd_sweep, CliError, Overrides, RunConfig, SweepGrid};

/// Simulate distributed time coordination over a switching network.
#[derive(Debug, Parser)]
#[command(name = "vtcoord", version)]
struct Args {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Consensus gain override.
    #[arg(long)]
    a: Option<f64>,
    /// Rate damping gain override.
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Write bounds.json and check the measured coordination error against it.
    #[arg(long)]
    check_bounds: bool,
    /// Check the windowed connectivity condition before running.
    #[arg(long)]
    verify_assumption3: bool,
    /// Simulate even when the connectivity condition fails.
    #[arg(long)]
    waive_connectivity: bool,
    /// Only compute bounds.json; no simulation.
    #[arg(long, conflicts_with = "sweep")]
    bounds_only: bool,
    /// Parameter grid JSON; writes summary.csv.
    #[arg(long)]
    sweep: Option<PathBuf>,
}

fn execute(args: Args) -> Result<(), CliError> {
    let cfg = RunConfig {
        scenario: args.scenario,
        out: args.out,
        overrides: Overrides {
            dt: args.dt,
            t_end: args.t_end,
            seed: args.seed,
            a: args.a,
            b: args.b,
            epsilon: args.epsilon,
        },
        check_bounds: args.check_bounds,
        verify_assumption3: args.verify_assumption3,
        waive_connectivity: args.waive_connectivity,
    };

    if let Some(grid) = args.sweep {
        let grid = SweepGrid::load(&grid)?;
        let rows = cmd_sweep(&cfg, &grid)?;
        let ok = rows.iter().filter(|r| r.result.is_ok()).count();
        println!("{ok}/{} cells ran; summary in {}", rows.len(), cfg.out.display());
        return Ok(());
    }

    if args.bounds_only {
        let report = cmd_bounds(&cfg)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        println!(
            "delta'={} k={} lambda={} lambda_tc={} kappa1={} kappa2={}",
            report.consensus.delta_prime,
            report.consensus.k,
            report.consensus.lambda,
            report.convergence.lambda_tc,
            report.convergence.kappa1,
            report.convergence.kappa2
        );
        return Ok(());
    }

    let outcome = cmd_run(&cfg)?;
    let m = &outcome.metrics;
    println!(
        "ran {} steps; final max |gamma_i - gamma_j| = {:.3e}, max |gammadot_i - gammadot_d| = {:.3e}",
        outcome.log.records.len(),
        m.final_max_pairwise_gamma,
        m.final_max_rate_error
    );
    if let Some(b) = &outcome.bounds {
        for w in &b.warnings {
            eprintln!("warning: {w}");
        }
        if let Some(iss) = &b.iss {
            println!(
                "iss bound {} (min margin {:.3e} at t={})",
                if iss.holds { "holds" } else { "violated" },
                iss.min_margin,
                iss.min_margin_t
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
