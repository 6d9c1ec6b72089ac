mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use tqd_core::{ErrorCategory, Result, TqdError};

use args::{Cli, Command};
use commands::Outcome;

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Io => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
        ErrorCategory::Artifact => 5,
    }
}

/// `TQD_THREADS` sizes the worker pool; unset or 0 leaves it to rayon.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("TQD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| TqdError::InvalidParameter(format!("TQD_THREADS must be a count, got `{v}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| TqdError::InvalidParameter(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    configure_threads()?;
    match cli.command {
        Command::Curate(a) => commands::execute(&config::resolve_curate(&a)?, &a.out.out),
        Command::SampleStats(a) => commands::execute(&config::resolve_sample_stats(&a)?, &a.out.out),
        Command::Train(a) => commands::execute(&config::resolve_train(&a)?, &a.out.out),
        Command::Probe(a) => commands::execute(&config::resolve_probe(&a)?, &a.out.out),
        Command::Sweep(a) => commands::execute(&config::resolve_sweep(&a)?, &a.out.out),
        Command::Synth(a) => commands::synth(&a),
        Command::Rerun(a) => commands::rerun(&a.config, &a.out.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(exit_code(ErrorCategory::Data)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
