use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use conevol_cli::commands::{self, RunOptions};
use conevol_cli::suite::Level;

#[derive(Parser)]
#[command(
    name = "conevol",
    version,
    about = "Paired deletion bodies: calibrate, inspect, experiment, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit both cone index sets and write the profile pair.
    Calibrate(RunArgs),
    /// Run the volume-gap and indistinguishability experiment.
    Experiment(RunArgs),
    /// Run the property suite and print a JSON summary.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "quick")]
        level: LevelArg,
    },
    /// Tabulate profiles, densities and the pairing residual as CSV.
    Inspect {
        #[arg(long)]
        pair: PathBuf,
        #[arg(long, default_value_t = 201)]
        grid: usize,
        /// Write inspect.csv here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; every key can also be set through CONEVOL_<SECTION>_<KEY>.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "conevol-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

impl From<RunArgs> for RunOptions {
    fn from(a: RunArgs) -> Self {
        RunOptions {
            config: a.config,
            seed: a.seed,
            workers: a.workers,
            out: a.out,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Calibrate(a) => commands::calibrate(&a.into()),
        Command::Experiment(a) => commands::experiment(&a.into()),
        Command::Verify { run, level } => {
            let level = match level {
                LevelArg::Quick => Level::Quick,
                LevelArg::Full => Level::Full,
            };
            commands::verify(&run.into(), level)
        }
        Command::Inspect { pair, grid, out } => commands::inspect(&pair, grid, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("conevol: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
