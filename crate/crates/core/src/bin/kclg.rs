use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kclg::experiment::{run, ExperimentSpec, Kind, RunOptions};

#[derive(Parser)]
#[command(name = "kclg", version, about = "Experiments on kinetically constrained lattice gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Empirical density profiles against the porous medium equation.
    Hydro(Flags),
    /// Spectral gaps over a sweep of sides and particle numbers.
    Gap(Flags),
    /// Irreducible components of hyperplanes.
    Ergodic(Flags),
    /// Time covariances of equilibrium fluctuation fields.
    Fluct(Flags),
    /// Exact invariant suite.
    Check(Flags),
}

#[derive(Args)]
struct Flags {
    /// TOML experiment spec; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, flags) = match cli.command {
        Command::Hydro(f) => (Kind::Hydro, f),
        Command::Gap(f) => (Kind::Gap, f),
        Command::Ergodic(f) => (Kind::Ergodic, f),
        Command::Fluct(f) => (Kind::Fluct, f),
        Command::Check(f) => (Kind::Check, f),
    };
    let spec = match &flags.spec {
        Some(path) => ExperimentSpec::load(path),
        None => Ok(ExperimentSpec::default()),
    };
    let spec = match spec {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let options = RunOptions { out: flags.out, seed: flags.seed, jobs: flags.jobs };
    match run(kind, &spec, &options) {
        Ok(summary) => {
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{kind}: {} ({} files in {})", if summary.passed { "ok" } else { "FAILED" }, summary.files.len(), options.out.display());
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
