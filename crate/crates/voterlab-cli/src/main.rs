use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use voterlab_cli::config::SuiteName;

/// Experiment harness for finite voter models and their measure-valued
/// limits.
#[derive(Parser)]
#[command(name = "voterlab", version)]
struct Cli {
    /// Suite to run; must match the config's `suite` key.
    #[arg(value_enum)]
    suite: SuiteName,
    /// Path to the key-value experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for replica farming; 0 picks the default.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Also write one representative event log as sample_log.bin.
    #[arg(long)]
    dump_log: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match voterlab_cli::run_suite(
        cli.suite,
        &cli.config,
        cli.seed,
        &cli.out,
        cli.threads,
        cli.dump_log,
    ) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
