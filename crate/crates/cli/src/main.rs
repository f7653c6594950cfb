use std::path::PathBuf;

use clap::Parser;
use halfplane_cli::config::CheckLevel;

/// Steady half-plane flow solver with decay certification. Threads: RAYON_NUM_THREADS.
#[derive(Parser)]
#[command(name = "solve", version)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Check suites to run (overrides the config).
    #[arg(long, value_enum)]
    checks: Option<CheckLevel>,
}

fn main() {
    let args = Args::parse();
    std::process::exit(halfplane_cli::run(&args.config, &args.out, args.checks));
}
