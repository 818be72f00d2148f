use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use blockstep::cli::{self, Command};

/// Block backstepping boundary control: kernels, gains, simulation and
/// verification for isotachic hyperbolic PIDE-ODE systems and multilayer
/// Timoshenko beams.
#[derive(Parser)]
#[command(name = "blockstep", version, about)]
struct Args {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the kernel equations; export kernel CSVs and a residual report.
    Kernels(CommonArgs),
    /// Solve and export the boundary gains and the Phi tables.
    Gains(CommonArgs),
    /// Run the configured time-domain simulation; export trajectories/norms.
    Simulate(CommonArgs),
    /// Run the invariant suite; exit nonzero on any failed check.
    Verify(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to the scenario configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifact files (default "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override both the kernel and simulation grid sizes.
    #[arg(long)]
    grid: Option<usize>,
    /// Override the kernel fixed-point tolerance.
    #[arg(long)]
    tol: Option<f64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let (cmd, common) = match &args.command {
        Cmd::Kernels(c) => (Command::Kernels, c),
        Cmd::Gains(c) => (Command::Gains, c),
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };

    let mut rc = match cli::load_config(&common.config) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(out) = &common.out {
        rc.out_dir = out.clone();
    }
    if let Some(g) = common.grid {
        rc.kernel_grid = g;
        rc.sim_grid = g;
    }
    if let Some(tol) = common.tol {
        rc.kernel_tol = tol;
    }

    match cli::run(cmd, &rc) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            if outcome.status == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error ({}): {e}", rc.scenario);
            ExitCode::from(2)
        }
    }
}
