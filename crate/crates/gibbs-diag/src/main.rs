use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gibbs_diag::compare::compare_files;
use gibbs_diag::parallel::thread_cap;
use gibbs_diag::run::{run, RunOptions};

/// Gibbs-prior diagnostics for approximate inference.
///
/// Exit codes: 0 success, 1 IO error, 2 chain failure, 3 config error.
#[derive(Debug, Parser)]
#[command(
    name = "gibbs-diag",
    version,
    args_conflicts_with_subcommands = true,
    subcommand_negates_reqs = true
)]
struct Cli {
    /// JSON run config (a manifest.json also works).
    #[arg(long, required = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Prints numeric deltas between two report.json files.
    Compare { a: PathBuf, b: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 3 } else { 0 });
        }
    };
    match cli.command {
        Some(Command::Compare { a, b }) => match compare_files(&a, &b) {
            Ok(table) => {
                print!("{table}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("gibbs-diag: {e}");
                ExitCode::from(3)
            }
        },
        None => {
            let opts = RunOptions {
                config_path: cli.config.expect("required unless a subcommand is given"),
                output: cli.output,
                seed_override: cli.seed_override,
                threads: thread_cap(),
            };
            match run(&opts) {
                Ok(dir) => {
                    eprintln!("gibbs-diag: wrote {}", dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("gibbs-diag: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
