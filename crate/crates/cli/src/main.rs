//! `gridline`: simulate measurements, estimate line impedances and rerun the
//! conditioning studies from a JSON scenario file.
//!
//! Exit codes: 0 success, 2 configuration or file error, 3 load-flow
//! failure, 4 estimator did not converge (report still written), 5 singular
//! or rank-deficient Jacobian, 6 Jacobian check failed.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod error;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridline::diagnostics::SweepKind;
use gridline::power_flow::SlackRows;
use gridline::{AngleRegime, Method};

use commands::Console;
use error::{exit, CliError};
use scenario::{Overrides, Scenario};

#[derive(Debug, Parser)]
#[command(name = "gridline", version, about = "Line-impedance estimation for radial distribution grids")]
struct Cli {
    /// Scenario JSON file.
    #[arg(long, global = true, default_value = "scenario.json")]
    scenario: PathBuf,
    /// Overrides the scenario seed (noise and sample shuffling).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the scenario output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress output on stdout.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    NrSquare,
    NrRms,
    NrLs,
    BoundedLs,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::NrSquare => Method::NrSquare,
            MethodArg::NrRms => Method::NrRms,
            MethodArg::NrLs => Method::NrLs,
            MethodArg::BoundedLs => Method::BoundedLs,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SweepArg {
    Rcond,
    Rho,
    Samples,
}

impl From<SweepArg> for SweepKind {
    fn from(s: SweepArg) -> Self {
        match s {
            SweepArg::Rcond => SweepKind::Rcond,
            SweepArg::Rho => SweepKind::Rho,
            SweepArg::Samples => SweepKind::Samples,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Pmu,
    Rms,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SlackRowsArg {
    Drop,
    Keep,
}

#[derive(Debug, clap::Args)]
struct SolverArgs {
    /// Newton step size α in (0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    regime: Option<RegimeArg>,
    #[arg(long, value_enum)]
    slack_rows: Option<SlackRowsArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize measurements from the scenario schedule.
    Simulate,
    /// Estimate line impedances.
    Estimate {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Run one of the conditioning or robustness studies.
    Sweep {
        #[arg(long, value_enum)]
        sweep: SweepArg,
    },
    /// Compare the analytical Jacobian with finite differences.
    CheckJacobian {
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
        /// Perturb analytical entry ROW,COL before comparing.
        #[arg(long, hide = true, value_parser = parse_entry)]
        corrupt_entry: Option<(usize, usize)>,
    },
}

fn parse_entry(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected ROW,COL")?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((parse(r)?, parse(c)?))
}

fn regime(arg: RegimeArg) -> AngleRegime {
    match arg {
        RegimeArg::Pmu => AngleRegime::Pmu,
        RegimeArg::Rms => AngleRegime::Rms,
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::Estimate { method, solver } => {
            overrides.method = method.map(Method::from);
            overrides.step_size = solver.alpha;
            overrides.tolerance = solver.tolerance;
            overrides.max_iterations = solver.max_iterations;
            overrides.regime = solver.regime.map(regime);
            overrides.slack_rows = solver.slack_rows.map(|s| match s {
                SlackRowsArg::Drop => SlackRows::Drop,
                SlackRowsArg::Keep => SlackRows::Keep,
            });
        }
        Command::CheckJacobian { regime: r, .. } => overrides.regime = r.map(regime),
        _ => {}
    }
    if !matches!(cli.command, Command::Sweep { .. }) {
        // Only sweeps evaluate their points in parallel.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let mut scenario = Scenario::load(&cli.scenario)?;
    overrides.apply(&mut scenario)?;
    let console = Console { quiet: cli.quiet };
    match cli.command {
        Command::Simulate => commands::simulate(&scenario, &console).map(drop),
        Command::Estimate { .. } => commands::estimate(&scenario, &console).map(drop),
        Command::Sweep { sweep } => commands::sweep(&scenario, sweep.into(), &console).map(drop),
        Command::CheckJacobian { corrupt_entry, .. } => {
            commands::check_jacobian(&scenario, corrupt_entry, &console).map(drop)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => {
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprintln!("{}", CliError::config(err.render()).to_json());
            return ExitCode::from(exit::CONFIG as u8);
        }
    };
    let level = if cli.quiet { "error" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code as u8)
        }
    }
}
