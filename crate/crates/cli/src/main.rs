//! `sosfunnel`: compute invariant funnels around reference trajectories and
//! check them against Monte Carlo dispersions.
//!
//! Exit codes: 0 success, 1 verification failure (a stage could not be
//! certified or a rollout left the funnel), 2 usage or configuration error.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sosfunnel", version, about)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug, -vvv solver iterations).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a funnel.
    Funnel {
        #[command(subcommand)]
        direction: Direction,
    },
    /// Check a funnel.
    Validate {
        #[command(subcommand)]
        check: Check,
    },
    /// Run a built-in scenario end to end: funnel, Monte Carlo, CSV.
    Demo {
        #[command(subcommand)]
        system: DemoSystem,
    },
    /// Write plot-facing series.
    Export {
        #[command(subcommand)]
        format: Format,
    },
}

#[derive(Subcommand)]
enum Direction {
    /// Grow the funnel from the initial set.
    Forward(RunArgs),
    /// Shrink the funnel back from the goal set.
    Backward(RunArgs),
}

#[derive(Subcommand)]
enum Check {
    /// Dispersed rollouts against a saved funnel.
    Mc(McArgs),
}

#[derive(Subcommand)]
enum DemoSystem {
    Dubins(DemoArgs),
    Entry(DemoArgs),
}

#[derive(Subcommand)]
enum Format {
    Csv(ExportArgs),
}

/// Flags that override the configuration file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub samples_multiplier: Option<f64>,
    /// Relative strictness margin.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Taylor degree of the polynomial dynamics.
    #[arg(long)]
    pub degree: Option<u32>,
}

#[derive(Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args)]
pub struct McArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Funnel file; defaults to `funnel.json` in the output directory.
    #[arg(long)]
    pub funnel: Option<PathBuf>,
    /// Number of rollouts.
    #[arg(long)]
    pub count: Option<usize>,
    /// Disturbance policy: resampled, held or adversarial.
    #[arg(long)]
    pub policy: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args)]
pub struct DemoArgs {
    /// Number of Monte Carlo rollouts.
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Funnel file; defaults to `funnel.json` in the output directory.
    #[arg(long)]
    pub funnel: Option<PathBuf>,
    /// Monte Carlo report to merge into `rho.csv`.
    #[arg(long)]
    pub mc: Option<PathBuf>,
    /// Also write the samples and a `V̇` grid for this step.
    #[arg(long)]
    pub vdot_slice: Option<usize>,
    /// State axes of the slice.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0usize, 1])]
    pub axes: Vec<usize>,
    /// Grid points per axis.
    #[arg(long, default_value_t = 41)]
    pub grid: usize,
    /// Slice extent as a multiple of the funnel half-width.
    #[arg(long, default_value_t = 1.5)]
    pub extent: f64,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_target(false)
        .init();
    let result = match cli.command {
        Command::Funnel { direction } => match direction {
            Direction::Forward(a) => run::funnel(&a, funnel_core::funnel::Mode::Forward),
            Direction::Backward(a) => run::funnel(&a, funnel_core::funnel::Mode::Backward),
        },
        Command::Validate { check: Check::Mc(a) } => run::validate_mc(&a),
        Command::Demo { system } => match system {
            DemoSystem::Dubins(a) => run::demo("dubins", &a),
            DemoSystem::Entry(a) => run::demo("entry", &a),
        },
        Command::Export { format: Format::Csv(a) } => run::export_csv(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
