//! Configuration, orchestration and report emission for the half-plane solver.

pub mod config;
pub mod output;
pub mod pipeline;

use std::path::Path;

use config::{CheckLevel, Config};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] halfplane::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 3,
            RunError::Solver(_) => 1,
        }
    }
}

/// Loads the config, runs the pipeline and writes reports. Returns the process exit code:
/// 0 all enabled checks pass, 1 a check failed, 2 the solver did not converge, 3 config error.
pub fn run(config_path: &Path, out: &Path, level: Option<CheckLevel>) -> i32 {
    let cfg = match Config::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    run_config(&cfg, out, level)
}

pub fn run_config(cfg: &Config, out: &Path, level: Option<CheckLevel>) -> i32 {
    run_with_summary(cfg, out, level).0
}

/// As [`run_config`], also returning the summary when the pipeline got far enough to build one.
pub fn run_with_summary(cfg: &Config, out: &Path, level: Option<CheckLevel>) -> (i32, Option<pipeline::Summary>) {
    let level = level.unwrap_or(cfg.checks.level);
    let outcome = match pipeline::execute(cfg, level) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return (e.exit_code(), None);
        }
    };
    if let Err(e) = output::emit_reports(&outcome, out) {
        eprintln!("{e}");
        return (e.exit_code(), Some(outcome.summary));
    }
    for c in outcome.summary.checks.iter().filter(|c| c.failed()) {
        eprintln!("[solve] FAIL {} (observed {:e}, tolerance {:e})", c.name, c.observed, c.tolerance);
    }
    (outcome.summary.exit_code, Some(outcome.summary))
}
