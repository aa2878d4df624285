use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use qplab::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "qplab", version, about = "Quasipotential and small-noise experiments")]
struct Cli {
    /// Log progress and warnings to stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Monte Carlo occupation measures and neighborhood masses.
    Simulate(Common),
    /// Class-to-class quasipotential matrix and its W-graph analysis.
    Quasipotential(Common),
    /// W-graph analysis of an analytic, numeric or stored matrix.
    Wgraph(Common),
    /// Sampled checks of the Lyapunov and growth conditions.
    Verify(Common),
    /// Minimum action between two points.
    ActionMin(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to $QPLAB_THREADS, then to the core count.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();

    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Quasipotential(c) => (Command::Quasipotential, c),
        Sub::Wgraph(c) => (Command::WGraph, c),
        Sub::Verify(c) => (Command::Verify, c),
        Sub::ActionMin(c) => (Command::ActionMin, c),
    };
    let opts = RunOptions { config: common.config, out: common.out, seed: common.seed, threads: common.threads };
    match run(command, &opts) {
        Ok(summary) => {
            for p in &summary.problems {
                eprintln!("{p}");
            }
            println!("{} files written to {} (config {})", summary.files.len(), opts.out.display(), summary.config_hash);
            if summary.failed {
                ExitCode::FAILURE
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("qplab: {e}");
            ExitCode::from(2)
        }
    }
}
