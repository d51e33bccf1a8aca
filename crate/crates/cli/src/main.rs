//! `wnlw`: command-line runner for the spectral laboratory.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "wnlw", version, about = "Wick-ordered cubic wave equation laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// TOML file with global keys and one table per subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for reports and the manifest. Without it only stdout is written.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a free-field sample.
    Sample(commands::SampleArgs),
    /// Monte Carlo Wick moments against the exact oracle.
    Wick(commands::WickArgs),
    /// Integrate one equation variant.
    Solve(commands::SolveArgs),
    /// Ternary tree counts and Picard term norms.
    Trees(commands::TreesArgs),
    /// Deterministic norm-inflation ladder.
    Inflate(commands::InflateArgs),
    /// Almost-sure norm-inflation ladder.
    #[command(name = "as-inflate")]
    AsInflate(commands::AsInflateArgs),
    /// Mollification convergence ladder.
    Converge(commands::ConvergeArgs),
    /// Closed-form and exhaustive oracles.
    Oracle(commands::OracleArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
